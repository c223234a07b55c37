#pragma once

#include "fpiq/core_optics.hpp"
#include "fpiq/photon_stats.hpp"
#include "fpiq/metrology.hpp"
#include "fpiq/detector_sim.hpp"
#include "fpiq/fitting.hpp"
#include "fpiq/io.hpp"
