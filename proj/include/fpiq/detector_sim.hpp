#pragma once

// Monte Carlo model of a photon-number-resolving pulse-integral detector:
// photon numbers per pulse, noisy pulse integrals, histogramming, threshold
// assignment and photon-number-resolved fringe scans.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <exception>
#include <map>
#include <numeric>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "fpiq/core_optics.hpp"
#include "fpiq/photon_stats.hpp"

namespace fpiq {

/// Linear-gain detector with equal Gaussian spread on every photon peak.
struct DetectorModel {
  double gain = 1.0;         // integral units per photon
  double noise_sigma = 0.1;  // same units
  int k_max_observable = 7;
  std::uint64_t seed = 42;

  void validate() const {
    if (!(gain > 0.0) || !std::isfinite(gain)) throw std::invalid_argument("detector gain must be positive");
    if (!(noise_sigma >= 0.0) || !std::isfinite(noise_sigma)) {
      throw std::invalid_argument("detector noise sigma must be >= 0");
    }
    if (!(noise_sigma < 0.5 * gain)) {
      throw std::invalid_argument("detector noise sigma must stay below gain/2 for separable peaks");
    }
    if (k_max_observable < 1) throw std::invalid_argument("k_max_observable must be >= 1");
  }

  friend bool operator==(const DetectorModel&, const DetectorModel&) = default;
};

struct CountRecord {
  std::size_t pulse_index = 0;
  int true_k = 0;
  double integral = 0.0;
  int assigned_k = 0;     // k_max_observable + 1 when overflow is set
  bool overflow = false;  // integral above the last threshold

  bool misassigned(int k_max_observable) const {
    return overflow ? true_k <= k_max_observable : assigned_k != true_k;
  }
};

enum class ThresholdMode { oracle, valley };

/// Thrown when histogram peaks cannot be told apart.
class SeparationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Random streams

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

/// Seed for the independent stream of grid point `index`.
inline std::uint64_t substream_seed(std::uint64_t seed, std::uint64_t index) {
  return splitmix64(seed ^ splitmix64(index));
}

/// Photons reaching the detector: Poisson then binomial thinning for coherent
/// light, binomial thinning for a Fock state.
template <class Engine>
int sample_transmitted_photons(const InputState& input, double transmission, Engine& rng) {
  auto thin = [&](int n) {
    if (n == 0) return 0;
    return std::binomial_distribution<int>(n, transmission)(rng);
  };
  if (const auto* c = std::get_if<CoherentInput>(&input)) {
    if (c->n_bar == 0.0) return 0;
    return thin(std::poisson_distribution<int>(c->n_bar)(rng));
  }
  return thin(std::get<FockInput>(input).n);
}

// ---------------------------------------------------------------------------
// Thresholds and assignment

/// Midpoints (k + 1/2) g for the boundaries 0|1 ... kmax|kmax+1.
inline std::vector<double> oracle_thresholds(const DetectorModel& d) {
  std::vector<double> out;
  for (int k = 0; k <= d.k_max_observable; ++k) out.push_back((k + 0.5) * d.gain);
  return out;
}

/// Photon number for one integral given strictly increasing thresholds.
inline void assign(CountRecord& r, std::span<const double> thresholds, int k_max_observable) {
  const int k = static_cast<int>(std::upper_bound(thresholds.begin(), thresholds.end(), r.integral) -
                                 thresholds.begin());
  r.overflow = k > k_max_observable;
  r.assigned_k = r.overflow ? k_max_observable + 1 : k;
}

/// `phase_drift` is the change of L/lambda accumulated over the n_pulses
/// acquisitions; pulse j sees p + phase_drift * j / n_pulses.
inline std::vector<CountRecord> simulate_pulses(const InputState& input, const MirrorSpec& m,
                                                Phase p, std::size_t n_pulses,
                                                const DetectorModel& d, std::uint64_t stream = 0,
                                                double phase_drift = 0.0) {
  d.validate();
  std::visit([](const auto& in) { validate(in); }, input);
  if (n_pulses == 0) throw std::invalid_argument("number of pulses must be positive");
  std::mt19937_64 rng(substream_seed(d.seed, stream));
  std::normal_distribution<double> noise(0.0, d.noise_sigma > 0.0 ? d.noise_sigma : 1.0);
  const double t = transmission(m, p);
  const auto thresholds = oracle_thresholds(d);
  std::vector<CountRecord> out(n_pulses);
  for (std::size_t i = 0; i < n_pulses; ++i) {
    auto& r = out[i];
    r.pulse_index = i;
    const double ti = phase_drift == 0.0
                          ? t
                          : transmission(m, Phase{p.l_over_lambda + phase_drift * static_cast<double>(i) /
                                                                        static_cast<double>(n_pulses)});
    r.true_k = sample_transmitted_photons(input, ti, rng);
    r.integral = r.true_k * d.gain + (d.noise_sigma > 0.0 ? noise(rng) : 0.0);
    assign(r, thresholds, d.k_max_observable);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Histogram

struct PulseHistogram {
  double origin = 0.0;  // lower edge of bin 0
  double bin_width = 1.0;
  std::vector<std::uint64_t> counts;
  std::vector<double> thresholds;  // strictly increasing k|k+1 boundaries

  double lower_edge(std::size_t i) const { return origin + bin_width * static_cast<double>(i); }
  double center(std::size_t i) const { return lower_edge(i) + 0.5 * bin_width; }
  std::vector<double> edges() const {
    std::vector<double> e(counts.size() + 1);
    for (std::size_t i = 0; i < e.size(); ++i) e[i] = lower_edge(i);
    return e;
  }
  std::uint64_t total() const { return std::accumulate(counts.begin(), counts.end(), std::uint64_t{0}); }
};

inline PulseHistogram build_histogram(std::span<const double> integrals, double bin_width) {
  if (integrals.empty()) throw std::invalid_argument("histogram needs at least one pulse");
  if (!(bin_width > 0.0)) throw std::invalid_argument("histogram bin width must be positive");
  const auto [lo, hi] = std::minmax_element(integrals.begin(), integrals.end());
  PulseHistogram h;
  h.bin_width = bin_width;
  h.origin = std::floor(*lo / bin_width) * bin_width;
  const auto bins = static_cast<std::size_t>(std::floor((*hi - h.origin) / bin_width)) + 1;
  h.counts.assign(bins, 0);
  for (double v : integrals) {
    auto i = static_cast<std::size_t>(std::floor((v - h.origin) / bin_width));
    h.counts[std::min(i, bins - 1)] += 1;
  }
  return h;
}

/// Thresholds at the valleys of a moving-average-smoothed histogram. Peaks
/// are local maxima of at least max(5, 1e-4 N) counts; neighbouring maxima
/// whose valley stays above half the smaller one are merged. Each threshold
/// sits at the centre of the flattest run of the valley minimum. When fewer
/// than `boundaries` valleys are visible the remaining thresholds are
/// extrapolated with the median spacing.
inline std::vector<double> valley_thresholds(const PulseHistogram& h, int boundaries,
                                             int smoothing = 3) {
  const std::size_t nb = h.counts.size();
  const double total = static_cast<double>(h.total());
  std::vector<double> s(nb, 0.0);
  const int half = std::max(0, smoothing / 2);
  for (std::size_t i = 0; i < nb; ++i) {
    double acc = 0.0;
    int used = 0;
    for (int d = -half; d <= half; ++d) {
      const auto j = static_cast<std::ptrdiff_t>(i) + d;
      if (j < 0 || j >= static_cast<std::ptrdiff_t>(nb)) continue;
      acc += static_cast<double>(h.counts[static_cast<std::size_t>(j)]);
      ++used;
    }
    s[i] = acc / used;
  }

  const double min_height = std::max(5.0, 1e-4 * total);
  std::vector<std::size_t> peaks;
  for (std::size_t i = 0; i < nb; ++i) {
    const double left = i > 0 ? s[i - 1] : 0.0;
    const double right = i + 1 < nb ? s[i + 1] : 0.0;
    if (s[i] >= min_height && s[i] > left && s[i] >= right) peaks.push_back(i);
  }
  // Merge maxima not separated by a deep enough valley.
  std::vector<std::size_t> kept;
  for (std::size_t p : peaks) {
    if (kept.empty()) {
      kept.push_back(p);
      continue;
    }
    const std::size_t q = kept.back();
    const double valley = *std::min_element(s.begin() + static_cast<std::ptrdiff_t>(q),
                                            s.begin() + static_cast<std::ptrdiff_t>(p) + 1);
    if (valley < 0.5 * std::min(s[p], s[q])) {
      kept.push_back(p);
    } else if (s[p] > s[q]) {
      kept.back() = p;
    }
  }
  if (kept.size() < 2) {
    throw SeparationError("pulse-integral histogram shows fewer than two separable peaks");
  }

  std::vector<double> thresholds;
  for (std::size_t j = 0; j + 1 < kept.size(); ++j) {
    const auto first = s.begin() + static_cast<std::ptrdiff_t>(kept[j]);
    const auto last = s.begin() + static_cast<std::ptrdiff_t>(kept[j + 1]) + 1;
    const double vmin = *std::min_element(first, last);
    // Longest run of bins at the valley minimum.
    std::size_t best_lo = 0, best_len = 0;
    for (std::size_t i = kept[j]; i <= kept[j + 1];) {
      if (s[i] != vmin) {
        ++i;
        continue;
      }
      const std::size_t lo = i;
      while (i <= kept[j + 1] && s[i] == vmin) ++i;
      if (i - lo > best_len) {
        best_len = i - lo;
        best_lo = lo;
      }
    }
    thresholds.push_back(h.lower_edge(best_lo) + 0.5 * h.bin_width * static_cast<double>(best_len));
  }

  std::vector<double> spacing;
  for (std::size_t j = 0; j + 1 < kept.size(); ++j) {
    spacing.push_back(h.center(kept[j + 1]) - h.center(kept[j]));
  }
  std::nth_element(spacing.begin(), spacing.begin() + static_cast<std::ptrdiff_t>(spacing.size() / 2),
                   spacing.end());
  const double step = spacing[spacing.size() / 2];
  for (double a : spacing) {
    // Irregular peak spacing means a peak was split or two were merged.
    if (a > 1.5 * step || a < 0.5 * step) {
      throw SeparationError("histogram peaks are irregularly spaced; photon numbers not separable");
    }
  }
  while (static_cast<int>(thresholds.size()) < boundaries) thresholds.push_back(thresholds.back() + step);
  if (static_cast<int>(thresholds.size()) > boundaries) thresholds.resize(static_cast<std::size_t>(boundaries));
  return thresholds;
}

/// Histogram of the pulse integrals with thresholds from the chosen mode.
inline PulseHistogram build_histogram(std::span<const CountRecord> records, double bin_width,
                                      const DetectorModel& d,
                                      ThresholdMode mode = ThresholdMode::oracle) {
  std::vector<double> integrals;
  integrals.reserve(records.size());
  for (const auto& r : records) integrals.push_back(r.integral);
  auto h = build_histogram(integrals, bin_width);
  h.thresholds = mode == ThresholdMode::oracle ? oracle_thresholds(d)
                                               : valley_thresholds(h, d.k_max_observable + 1);
  return h;
}

inline void assign_counts(const PulseHistogram& h, std::span<CountRecord> records,
                          int k_max_observable) {
  if (!std::is_sorted(h.thresholds.begin(), h.thresholds.end()) ||
      std::adjacent_find(h.thresholds.begin(), h.thresholds.end()) != h.thresholds.end()) {
    throw std::invalid_argument("thresholds must be strictly increasing");
  }
  for (auto& r : records) assign(r, h.thresholds, k_max_observable);
}

// ---------------------------------------------------------------------------
// Fringe scans

struct ScanOptions {
  // Cavity drift in L/lambda per grid point, linear in acquisition time and
  // against the scan direction: pulse j of point i sees
  // x_i - drift * (i + j / pulses).
  double drift_per_point = 0.0;
  ThresholdMode thresholds = ThresholdMode::oracle;
  double bin_width = 0.0;  // 0 selects gain / 20
  unsigned threads = 0;    // 0 selects hardware concurrency
};

struct ScanResult {
  std::vector<FringeCurve> curves;  // k = 0 .. k_max_observable, empirical frequencies
  std::size_t pulses_per_point = 0;
  std::uint64_t misassigned = 0;
  std::uint64_t overflow = 0;
  PulseHistogram histogram;  // pooled over all grid points

  const FringeCurve& curve(int k) const {
    for (const auto& c : curves) {
      if (c.k == k) return c;
    }
    throw std::out_of_range("no curve for k = " + std::to_string(k));
  }
};

namespace detail {

template <class Fn>
void parallel_for(std::size_t n, unsigned threads, Fn&& fn) {
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = static_cast<unsigned>(std::min<std::size_t>(threads, std::max<std::size_t>(n, 1)));
  std::vector<std::exception_ptr> errors(threads);
  std::vector<std::thread> pool;
  for (unsigned t = 0; t < threads; ++t) {
    pool.emplace_back([&, t] {
      try {
        for (std::size_t i = t; i < n; i += threads) fn(i);
      } catch (...) {
        errors[t] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace detail

/// Simulates `pulses_per_point` pulses at every grid point. Point i uses the
/// random stream substream_seed(seed, i), so the result does not depend on
/// the thread count.
inline ScanResult scan_experiment(const InputState& input, const MirrorSpec& m,
                                  const PhaseGrid& grid, std::size_t pulses_per_point,
                                  const DetectorModel& d, const ScanOptions& opt = {}) {
  grid.validate();
  d.validate();
  if (pulses_per_point == 0) throw std::invalid_argument("pulses per grid point must be positive");
  const auto xs = grid.values();
  const std::size_t n = xs.size();

  std::vector<std::vector<CountRecord>> records(n);
  detail::parallel_for(n, opt.threads, [&](std::size_t i) {
    const Phase p{xs[i] - opt.drift_per_point * static_cast<double>(i)};
    records[i] = simulate_pulses(input, m, p, pulses_per_point, d, i, -opt.drift_per_point);
  });

  std::vector<double> integrals;
  integrals.reserve(n * pulses_per_point);
  for (const auto& rs : records) {
    for (const auto& r : rs) integrals.push_back(r.integral);
  }
  ScanResult out;
  out.pulses_per_point = pulses_per_point;
  out.histogram = build_histogram(integrals, opt.bin_width > 0.0 ? opt.bin_width : d.gain / 20.0);
  out.histogram.thresholds = opt.thresholds == ThresholdMode::oracle
                                 ? oracle_thresholds(d)
                                 : valley_thresholds(out.histogram, d.k_max_observable + 1);

  const int kmax = d.k_max_observable;
  for (int k = 0; k <= kmax; ++k) {
    FringeCurve c{kind_of(input), mean_photons(input), k, m, {}};
    c.samples.resize(n);
    out.curves.push_back(std::move(c));
  }
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<std::uint64_t> tally(static_cast<std::size_t>(kmax) + 1, 0);
    assign_counts(out.histogram, records[i], kmax);
    for (const auto& r : records[i]) {
      if (r.overflow) {
        ++out.overflow;
      } else {
        ++tally[static_cast<std::size_t>(r.assigned_k)];
      }
      if (r.misassigned(kmax)) ++out.misassigned;
    }
    for (int k = 0; k <= kmax; ++k) {
      out.curves[static_cast<std::size_t>(k)].samples[i] = {
          xs[i], static_cast<double>(tally[static_cast<std::size_t>(k)]) /
                     static_cast<double>(pulses_per_point)};
    }
  }
  return out;
}

/// Pointwise sum_{k=1}^{K} k p_k over curves sharing one grid.
inline FringeCurve reconstruct_classical(std::span<const FringeCurve> curves, int k_last) {
  if (k_last < 1) throw std::invalid_argument("reconstruction needs k_last >= 1");
  std::map<int, const FringeCurve*> by_k;
  for (const auto& c : curves) {
    if (c.k) by_k[*c.k] = &c;
  }
  FringeCurve out;
  for (int k = 1; k <= k_last; ++k) {
    auto it = by_k.find(k);
    if (it == by_k.end()) throw std::invalid_argument("missing curve for k = " + std::to_string(k));
    const FringeCurve& c = *it->second;
    if (k == 1) {
      out = FringeCurve{c.kind, c.parameter, std::nullopt, c.mirror, c.samples};
      for (auto& s : out.samples) s.value = 0.0;
    }
    if (c.samples.size() != out.samples.size()) throw std::invalid_argument("curves do not share a grid");
    for (std::size_t i = 0; i < c.samples.size(); ++i) {
      if (c.samples[i].l_over_lambda != out.samples[i].l_over_lambda) {
        throw std::invalid_argument("curves do not share a grid");
      }
      out.samples[i].value += k * c.samples[i].value;
    }
  }
  return out;
}

}  // namespace fpiq
