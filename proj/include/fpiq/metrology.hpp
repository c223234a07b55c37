#pragma once

// Length sensitivity by error propagation, shot-noise baseline, peak-position
// statistics, FSR uncertainty and finesse.

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "fpiq/core_optics.hpp"
#include "fpiq/photon_stats.hpp"

namespace fpiq {

// ---------------------------------------------------------------------------
// Sensitivity

enum class SensitivityKind { coherent_mean, coherent_k, fock_k };

struct SensitivitySpec {
  SensitivityKind kind = SensitivityKind::coherent_mean;
  double parameter = 1.0;  // n_bar, or n for Fock
  int k = 0;

  static SensitivitySpec coherent_mean(double n_bar) {
    return {SensitivityKind::coherent_mean, n_bar, 0};
  }
  static SensitivitySpec coherent_k(double n_bar, int k) {
    return {SensitivityKind::coherent_k, n_bar, k};
  }
  static SensitivitySpec fock_k(int n, int k) {
    return {SensitivityKind::fock_k, static_cast<double>(n), k};
  }

  InputState input() const {
    if (kind == SensitivityKind::fock_k) return FockInput{static_cast<int>(parameter)};
    return CoherentInput{parameter};
  }
};

/// Error propagation for a two-outcome projector with <C> = p:
/// sqrt(p(1-p)) / |dp/dL|. Empty when p is 0 or 1 or the slope vanishes.
inline std::optional<double> sensitivity_binary(double p, double q, double dp_dl) {
  if (!(p > 0.0) || !(q > 0.0) || dp_dl == 0.0 || !std::isfinite(dp_dl)) return std::nullopt;
  return std::sqrt(p * q) / std::abs(dp_dl);
}

inline std::optional<double> sensitivity_binary(double p, double dp_dl) {
  return sensitivity_binary(p, 1.0 - p, dp_dl);
}

/// Shot-noise baseline for a mean-intensity measurement of a coherent state:
/// |T| / (sqrt(n_bar) |d|T|^2/dL|).
inline std::optional<double> sensitivity_coherent_mean(const CoherentInput& c,
                                                       const MirrorSpec& m, Phase p) {
  validate(c);
  if (!(c.n_bar > 0.0)) throw std::invalid_argument("shot-noise sensitivity needs n_bar > 0");
  if (is_stationary(m, p)) return std::nullopt;
  const double dt = d_transmission_dl(m, p);
  const double t = transmission(m, p);
  if (dt == 0.0 || t == 0.0) return std::nullopt;
  return std::sqrt(t) / (std::sqrt(c.n_bar) * std::abs(dt));
}

/// k-photon projector sensitivity for coherent or Fock input.
inline std::optional<double> sensitivity_photon_resolved(const InputState& s,
                                                         const MirrorSpec& m, Phase p, int k) {
  if (is_stationary(m, p)) return std::nullopt;
  const double prob = p_k(s, m, p, k);
  return sensitivity_binary(prob, p_k_complement(s, m, p, k), dp_k_dl(s, m, p, k));
}

inline std::optional<double> sensitivity(const SensitivitySpec& spec, const MirrorSpec& m,
                                         Phase p) {
  if (spec.kind == SensitivityKind::coherent_mean) {
    return sensitivity_coherent_mean(CoherentInput{spec.parameter}, m, p);
  }
  return sensitivity_photon_resolved(spec.input(), m, p, spec.k);
}

struct SensitivitySample {
  double l_over_lambda = 0.0;
  std::optional<double> delta_l_over_lambda;  // empty where undefined
};

struct SensitivityCurve {
  SensitivitySpec spec;
  MirrorSpec mirror = MirrorSpec::from_power(0.0);
  std::vector<SensitivitySample> samples;
};

inline SensitivityCurve sensitivity_scan(const SensitivitySpec& spec, const MirrorSpec& m,
                                         const PhaseGrid& grid) {
  SensitivityCurve curve{spec, m, {}};
  for (double x : grid.values()) curve.samples.push_back({x, sensitivity(spec, m, Phase{x})});
  return curve;
}

struct SensitivityMinimum {
  double l_over_lambda = 0.0;
  double delta_l_over_lambda = 0.0;
};

/// Global minimum over one period: dense scan of 10^4 points, then
/// golden-section refinement to 1e-10 in L/lambda. Undefined points count as
/// +infinity, so a minimum approached only in the limit of a stationary point
/// is returned at the closest refined abscissa.
inline SensitivityMinimum min_sensitivity(const SensitivitySpec& spec, const MirrorSpec& m,
                                          std::size_t scan_points = 10000,
                                          double tolerance = 1e-10) {
  constexpr double inf = std::numeric_limits<double>::infinity();
  auto eval = [&](double x) { return sensitivity(spec, m, Phase{x}).value_or(inf); };

  const double lo = peak_position(m) - 0.5 * kFreeSpectralRange;
  const double step = kFreeSpectralRange / static_cast<double>(scan_points);
  std::size_t best = 0;
  double best_val = inf;
  for (std::size_t i = 0; i < scan_points; ++i) {
    const double v = eval(lo + step * static_cast<double>(i));
    if (v < best_val) {
      best_val = v;
      best = i;
    }
  }
  if (!std::isfinite(best_val)) throw std::runtime_error("sensitivity undefined over the whole period");

  double a = lo + step * (static_cast<double>(best) - 1.0);
  double b = lo + step * (static_cast<double>(best) + 1.0);
  const double g = (std::sqrt(5.0) - 1.0) / 2.0;
  double c = b - g * (b - a);
  double d = a + g * (b - a);
  double fc = eval(c);
  double fd = eval(d);
  while (b - a > tolerance) {
    if (fc < fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - g * (b - a);
      fc = eval(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + g * (b - a);
      fd = eval(d);
    }
  }
  SensitivityMinimum out{lo + step * static_cast<double>(best), best_val};
  for (auto [x, v] : {std::pair{c, fc}, std::pair{d, fd}}) {
    if (v < out.delta_l_over_lambda) out = {x, v};
  }
  return out;
}

struct MinimaRow {
  int n = 0;
  SensitivityMinimum fock;      // |n> with n-photon detection
  SensitivityMinimum coherent;  // shot-noise baseline at n_bar = n
  double ratio() const { return fock.delta_l_over_lambda / coherent.delta_l_over_lambda; }
};

inline std::vector<MinimaRow> minima_table(const MirrorSpec& m, int n_first, int n_last) {
  if (n_first < 1 || n_last < n_first) throw std::invalid_argument("photon-number range must satisfy 1 <= first <= last");
  std::vector<MinimaRow> rows;
  for (int n = n_first; n <= n_last; ++n) {
    rows.push_back({n, min_sensitivity(SensitivitySpec::fock_k(n, n), m),
                    min_sensitivity(SensitivitySpec::coherent_mean(n), m)});
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Peak statistics

struct Window {
  double lo = 0.0;
  double hi = 0.0;
  bool contains(double x) const { return x >= lo && x <= hi; }
};

/// Weighted mean and spread of one fringe peak. `sigma` is the standard
/// deviation of the normalised distribution inside the window; sigma/sqrt(N)
/// is the standard deviation of the mean.
struct PeakStats {
  double center = 0.0;
  double sigma = 0.0;
  double total_counts = 0.0;
  Window window;

  double standard_error() const { return sigma / std::sqrt(total_counts); }
};

inline PeakStats peak_stats(std::span<const double> xs, std::span<const double> counts,
                            Window w) {
  if (xs.size() != counts.size()) throw std::invalid_argument("abscissa and counts differ in length");
  double n = 0.0;
  std::size_t used = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (!w.contains(xs[i])) continue;
    if (counts[i] < 0.0) throw std::invalid_argument("peak counts must be nonnegative");
    n += counts[i];
    ++used;
  }
  if (used == 0) throw std::invalid_argument("peak window contains no samples");
  if (!(n > 0.0)) throw std::invalid_argument("peak window holds zero total counts");
  double mu = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (w.contains(xs[i])) mu += counts[i] / n * xs[i];
  }
  double var = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (!w.contains(xs[i])) continue;
    const double d = xs[i] - mu;
    var += counts[i] / n * d * d;
  }
  if (!(var > 0.0)) throw std::invalid_argument("peak window holds a single populated sample");
  return {mu, std::sqrt(var), n, w};
}

inline PeakStats peak_stats(const FringeCurve& curve, Window w) {
  const auto xs = curve.xs();
  const auto ys = curve.values();
  return peak_stats(xs, ys, w);
}

/// Half-width of the window used for peak statistics, in classical FWHMs.
inline constexpr double kResolutionWindowFwhms = 2.0;

inline Window resolution_window(double center, double fwhm) {
  return {center - kResolutionWindowFwhms * fwhm, center + kResolutionWindowFwhms * fwhm};
}

/// Window around the model peak nearest to `near`.
inline Window resolution_window(const MirrorSpec& m, double near) {
  return resolution_window(nearest_peak(m, near), classical_fwhm(m));
}

struct FsrEstimate {
  double delta_l = 0.0;
  double sigma_delta_l = 0.0;
};

/// Free spectral range from two adjacent peaks, with
/// sigma = sqrt(s1^2/n1 + s2^2/n2).
inline FsrEstimate fsr_uncertainty(const PeakStats& first, const PeakStats& second) {
  if (!(first.total_counts > 0.0) || !(second.total_counts > 0.0)) {
    throw std::invalid_argument("FSR uncertainty needs nonzero counts in both peaks");
  }
  const double dl = std::abs(second.center - first.center);
  if (!(dl > 0.0)) throw std::invalid_argument("FSR uncertainty needs two distinct peaks");
  return {dl, std::sqrt(first.sigma * first.sigma / first.total_counts +
                        second.sigma * second.sigma / second.total_counts)};
}

/// Counts per peak needed to reach a target FSR uncertainty when both peaks
/// share width sigma: n = 2 sigma^2 / target^2. Shrinking sigma by m cuts the
/// requirement by m^2.
inline double required_counts(double sigma, double target_sigma_delta_l) {
  if (!(target_sigma_delta_l > 0.0)) throw std::invalid_argument("target uncertainty must be positive");
  return 2.0 * sigma * sigma / (target_sigma_delta_l * target_sigma_delta_l);
}

// ---------------------------------------------------------------------------
// Finesse

struct FringeMaximum {
  std::size_t index = 0;
  double position = 0.0;  // parabolic refinement of the grid maximum
  double value = 0.0;
};

/// One maximum per contiguous run above half the global maximum.
inline std::vector<FringeMaximum> find_fringe_maxima(std::span<const double> xs,
                                                     std::span<const double> ys) {
  std::vector<FringeMaximum> out;
  if (xs.size() != ys.size() || xs.empty()) return out;
  const double half = 0.5 * *std::max_element(ys.begin(), ys.end());
  std::size_t i = 0;
  while (i < ys.size()) {
    if (ys[i] <= half) {
      ++i;
      continue;
    }
    std::size_t best = i;
    const std::size_t run_start = i;
    while (i < ys.size() && ys[i] > half) {
      if (ys[i] > ys[best]) best = i;
      ++i;
    }
    // Skip runs clipped by either end of the grid.
    if (run_start == 0 || i == ys.size()) continue;
    double pos = xs[best];
    if (best > 0 && best + 1 < ys.size()) {
      const double y0 = ys[best - 1], y1 = ys[best], y2 = ys[best + 1];
      const double denom = y0 - 2.0 * y1 + y2;
      if (denom < 0.0) pos += 0.5 * (y0 - y2) / denom * (xs[best + 1] - xs[best]);
    }
    out.push_back({best, pos, ys[best]});
  }
  return out;
}

/// Full width at half maximum of the peak at `peak`, by linear interpolation.
inline double measure_fwhm(std::span<const double> xs, std::span<const double> ys,
                           std::size_t peak) {
  const double half = 0.5 * ys[peak];
  std::size_t l = peak;
  while (l > 0 && ys[l] > half) --l;
  std::size_t r = peak;
  while (r + 1 < ys.size() && ys[r] > half) ++r;
  if (ys[l] > half || ys[r] > half) throw std::invalid_argument("peak does not fall to half maximum inside the curve");
  const double xl = xs[l] + (half - ys[l]) / (ys[l + 1] - ys[l]) * (xs[l + 1] - xs[l]);
  const double xr = xs[r - 1] + (half - ys[r - 1]) / (ys[r] - ys[r - 1]) * (xs[r] - xs[r - 1]);
  return xr - xl;
}

inline double measure_fwhm(const FringeCurve& curve) {
  const auto xs = curve.xs();
  const auto ys = curve.values();
  const auto maxima = find_fringe_maxima(xs, ys);
  if (maxima.empty()) throw std::invalid_argument("curve has no complete fringe maximum");
  return measure_fwhm(xs, ys, maxima.front().index);
}

/// Measured FSR / FWHM. Needs two complete maxima.
inline double finesse(const FringeCurve& curve) {
  const auto xs = curve.xs();
  const auto ys = curve.values();
  const auto maxima = find_fringe_maxima(xs, ys);
  if (maxima.size() < 2) throw std::invalid_argument("finesse needs a curve with two fringe maxima");
  const double fsr = maxima[1].position - maxima[0].position;
  return fsr / measure_fwhm(xs, ys, maxima[0].index);
}

/// pi sqrt(R) / (1 - R), valid for R > 0.5.
inline double finesse_classical_approx(const MirrorSpec& m) {
  if (!(m.r2() > 0.5)) throw std::invalid_argument("classical finesse approximation needs r2 > 0.5");
  return std::numbers::pi * std::sqrt(m.r2()) / (1.0 - m.r2());
}

}  // namespace fpiq
