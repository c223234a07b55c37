#pragma once

// Photon-number-resolved detection probabilities behind the cavity for
// coherent and Fock inputs.

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "fpiq/core_optics.hpp"

namespace fpiq {

struct CoherentInput {
  double n_bar = 0.0;
  friend bool operator==(const CoherentInput&, const CoherentInput&) = default;
};

struct FockInput {
  int n = 0;
  friend bool operator==(const FockInput&, const FockInput&) = default;
};

inline constexpr int kMaxFockNumber = 170;

using InputState = std::variant<CoherentInput, FockInput>;

inline void validate(const CoherentInput& c) {
  if (!(c.n_bar >= 0.0) || !std::isfinite(c.n_bar)) {
    throw std::invalid_argument("coherent mean photon number must be finite and >= 0");
  }
}

inline void validate(const FockInput& f) {
  if (f.n < 0 || f.n > kMaxFockNumber) {
    throw std::invalid_argument("Fock photon number must lie in [0, 170], got " +
                                std::to_string(f.n));
  }
}

/// Mean photon number of either input kind.
inline double mean_photons(const InputState& s) {
  return std::visit(
      [](const auto& in) -> double {
        if constexpr (std::is_same_v<std::decay_t<decltype(in)>, CoherentInput>) {
          return in.n_bar;
        } else {
          return static_cast<double>(in.n);
        }
      },
      s);
}

// ---------------------------------------------------------------------------
// Distributions, evaluated in log space.

inline double log_factorial(int k) { return std::lgamma(static_cast<double>(k) + 1.0); }

inline double log_binomial_coefficient(int n, int k) {
  return log_factorial(n) - log_factorial(k) - log_factorial(n - k);
}

inline double poisson_pmf(int k, double mean) {
  if (k < 0) return 0.0;
  if (mean == 0.0) return k == 0 ? 1.0 : 0.0;
  return std::exp(k * std::log(mean) - mean - log_factorial(k));
}

/// Binomial pmf with success probability t. The failure probability q is
/// passed separately so callers can supply an accurate 1 - t.
inline double binomial_pmf(int k, int n, double t, double q) {
  if (k < 0 || k > n) return 0.0;
  if (t == 0.0) return k == 0 ? 1.0 : 0.0;
  if (q == 0.0) return k == n ? 1.0 : 0.0;
  return std::exp(log_binomial_coefficient(n, k) + k * std::log(t) + (n - k) * std::log(q));
}

inline double binomial_pmf(int k, int n, double t) { return binomial_pmf(k, n, t, 1.0 - t); }

/// Smallest K such that the Poisson(mean) tail beyond K is below tol.
inline int coherent_truncation(double n_bar, double tol = 1e-12) {
  validate(CoherentInput{n_bar});
  const int hi = static_cast<int>(std::ceil(n_bar + 40.0 * std::sqrt(n_bar) + 60.0));
  // tail[K] = sum_{j > K} pmf(j), accumulated from the far end.
  std::vector<double> tail(static_cast<std::size_t>(hi) + 1, 0.0);
  double acc = 0.0;
  for (int j = hi; j >= 0; --j) {
    tail[static_cast<std::size_t>(j)] = acc;
    acc += poisson_pmf(j, n_bar);
  }
  for (int k = 0; k <= hi; ++k) {
    if (tail[static_cast<std::size_t>(k)] < tol) return k;
  }
  return hi;
}

// ---------------------------------------------------------------------------
// Detection probabilities.

/// Probability of detecting k photons for a coherent input. The series over
/// the input photon number collapses to Poisson(n_bar |T|^2).
inline double p_k_coherent(const CoherentInput& c, const MirrorSpec& m, Phase p, int k) {
  validate(c);
  if (k < 0) throw std::invalid_argument("photon number k must be >= 0");
  return poisson_pmf(k, c.n_bar * transmission(m, p));
}

/// Mean detected photon number (intensity signal), n_bar |T|^2.
inline double classical_mean_coherent(const CoherentInput& c, const MirrorSpec& m, Phase p) {
  validate(c);
  return c.n_bar * transmission(m, p);
}

/// Binomial thinning of an n-photon Fock state by |T|^2. Requesting k > n is
/// a caller bug and throws.
inline double p_k_fock(const FockInput& f, const MirrorSpec& m, Phase p, int k) {
  validate(f);
  if (k < 0 || k > f.n) {
    throw std::invalid_argument("Fock detection requires 0 <= k <= n (k=" + std::to_string(k) +
                                ", n=" + std::to_string(f.n) + ")");
  }
  return binomial_pmf(k, f.n, transmission(m, p), reflection(m, p));
}

inline double mean_fock(const FockInput& f, const MirrorSpec& m, Phase p) {
  validate(f);
  return f.n * transmission(m, p);
}

/// Detection probability for either input kind.
inline double p_k(const InputState& s, const MirrorSpec& m, Phase p, int k) {
  return std::visit(
      [&](const auto& in) -> double {
        if constexpr (std::is_same_v<std::decay_t<decltype(in)>, CoherentInput>) {
          return p_k_coherent(in, m, p, k);
        } else {
          return p_k_fock(in, m, p, k);
        }
      },
      s);
}

inline double mean_detected(const InputState& s, const MirrorSpec& m, Phase p) {
  return mean_photons(s) * transmission(m, p);
}

/// 1 - p_k, accurate where p_k approaches one: the Fock k = n peak and the
/// k = 0 outcome far from resonance.
inline double p_k_complement(const InputState& s, const MirrorSpec& m, Phase p, int k) {
  if (const auto* f = std::get_if<FockInput>(&s); f && f->n > 0) {
    if (k == f->n) {
      // 1 - t^n with t = 1 - |R|^2
      return -std::expm1(f->n * std::log1p(-reflection(m, p)));
    }
    if (k == 0) {
      return -std::expm1(f->n * std::log1p(-transmission(m, p)));
    }
  }
  if (const auto* c = std::get_if<CoherentInput>(&s); c && k == 0) {
    return -std::expm1(-c->n_bar * transmission(m, p));
  }
  return 1.0 - p_k(s, m, p, k);
}

/// d p_k / d(L/lambda) by the chain rule through |T|^2.
inline double dp_k_dl(const InputState& s, const MirrorSpec& m, Phase p, int k) {
  const double dt = d_transmission_dl(m, p);
  const double t = transmission(m, p);
  return std::visit(
      [&](const auto& in) -> double {
        if constexpr (std::is_same_v<std::decay_t<decltype(in)>, CoherentInput>) {
          validate(in);
          const double mu = in.n_bar * t;
          // d/dmu Poisson(k; mu) = Poisson(k-1; mu) - Poisson(k; mu)
          return in.n_bar * (poisson_pmf(k - 1, mu) - poisson_pmf(k, mu)) * dt;
        } else {
          validate(in);
          if (k < 0 || k > in.n) throw std::invalid_argument("Fock detection requires 0 <= k <= n");
          if (in.n == 0) return 0.0;
          const double q = reflection(m, p);
          return in.n * (binomial_pmf(k - 1, in.n - 1, t, q) - binomial_pmf(k, in.n - 1, t, q)) *
                 dt;
        }
      },
      s);
}

// ---------------------------------------------------------------------------
// Sampled curves.

/// Uniform grid of L/lambda values; a single point is allowed.
struct PhaseGrid {
  double start = 0.0;
  double stop = 1.0;
  std::size_t points = 2001;

  void validate() const {
    if (points == 0) throw std::invalid_argument("phase grid must contain at least one point");
    if (!std::isfinite(start) || !std::isfinite(stop)) {
      throw std::invalid_argument("phase grid bounds must be finite");
    }
    if (points > 1 && !(stop > start)) {
      throw std::invalid_argument("phase grid must be strictly increasing (stop > start)");
    }
  }

  double at(std::size_t i) const {
    if (points == 1) return start;
    if (i + 1 == points) return stop;
    return start + (stop - start) * static_cast<double>(i) / static_cast<double>(points - 1);
  }

  std::vector<double> values() const {
    validate();
    std::vector<double> xs(points);
    for (std::size_t i = 0; i < points; ++i) xs[i] = at(i);
    return xs;
  }

  friend bool operator==(const PhaseGrid&, const PhaseGrid&) = default;
};

enum class InputKind { coherent, fock };

struct Sample {
  double l_over_lambda = 0.0;
  double value = 0.0;
};

/// A probability (or mean count) curve versus L/lambda. `k` empty means the
/// curve is the mean detected photon number.
struct FringeCurve {
  InputKind kind = InputKind::coherent;
  double parameter = 0.0;
  std::optional<int> k;
  MirrorSpec mirror = MirrorSpec::from_power(0.0);
  std::vector<Sample> samples;

  std::vector<double> xs() const {
    std::vector<double> out;
    out.reserve(samples.size());
    for (const auto& s : samples) out.push_back(s.l_over_lambda);
    return out;
  }
  std::vector<double> values() const {
    std::vector<double> out;
    out.reserve(samples.size());
    for (const auto& s : samples) out.push_back(s.value);
    return out;
  }
};

inline InputKind kind_of(const InputState& s) {
  return std::holds_alternative<CoherentInput>(s) ? InputKind::coherent : InputKind::fock;
}

/// One curve per requested k, then the mean curve if requested.
inline std::vector<FringeCurve> fringe_scan(const InputState& input, const MirrorSpec& m,
                                            const PhaseGrid& grid, std::span<const int> ks,
                                            bool include_mean) {
  grid.validate();
  if (ks.empty() && !include_mean) {
    throw std::invalid_argument("fringe scan needs at least one k or the mean curve");
  }
  const auto xs = grid.values();
  std::vector<FringeCurve> curves;
  auto make = [&](std::optional<int> k) {
    FringeCurve c{kind_of(input), mean_photons(input), k, m, {}};
    c.samples.reserve(xs.size());
    for (double x : xs) {
      const Phase p{x};
      c.samples.push_back({x, k ? p_k(input, m, p, *k) : mean_detected(input, m, p)});
    }
    curves.push_back(std::move(c));
  };
  for (int k : ks) make(k);
  if (include_mean) make(std::nullopt);
  return curves;
}

}  // namespace fpiq
