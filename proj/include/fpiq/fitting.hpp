#pragma once

// Least-squares recovery of (n_bar, r2) from photon-number-resolved fringes,
// classical-signal fits, and the dip diagnostic that brackets n_bar without
// fitting.

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "fpiq/core_optics.hpp"
#include "fpiq/photon_stats.hpp"

namespace fpiq {

// ---------------------------------------------------------------------------
// Nelder-Mead simplex

struct SimplexOptions {
  int max_iterations = 10000;
  double f_tolerance = 1e-15;  // relative spread of simplex values
  double x_tolerance = 1e-11;  // simplex diameter
};

struct SimplexResult {
  std::vector<double> x;
  double value = 0.0;
  int iterations = 0;
  bool converged = false;
};

template <class Objective>
SimplexResult nelder_mead(Objective&& f, std::vector<double> x0, std::vector<double> step,
                          const SimplexOptions& opt = {}) {
  const std::size_t n = x0.size();
  if (step.size() != n) throw std::invalid_argument("simplex step size must match the dimension");
  std::vector<std::vector<double>> pts(n + 1, x0);
  for (std::size_t i = 0; i < n; ++i) pts[i + 1][i] += step[i];
  std::vector<double> vals(n + 1);
  for (std::size_t i = 0; i <= n; ++i) vals[i] = f(pts[i]);

  std::vector<std::size_t> order(n + 1);
  SimplexResult res;
  auto at = [&](const std::vector<double>& c, const std::vector<double>& w, double t) {
    std::vector<double> out(n);
    for (std::size_t j = 0; j < n; ++j) out[j] = c[j] + t * (w[j] - c[j]);
    return out;
  };

  for (res.iterations = 0; res.iterations < opt.max_iterations; ++res.iterations) {
    for (std::size_t i = 0; i <= n; ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](auto a, auto b) { return vals[a] < vals[b]; });
    const std::size_t best = order.front(), worst = order.back(), second = order[n - 1];

    double diameter = 0.0;
    for (std::size_t i = 0; i <= n; ++i) {
      for (std::size_t j = 0; j < n; ++j) diameter = std::max(diameter, std::abs(pts[i][j] - pts[best][j]));
    }
    const double spread = vals[worst] - vals[best];
    // Either a collapsed simplex or a flat one; at a zero-residual optimum the
    // relative spread never drops below roundoff, so both cannot be required.
    if (diameter <= opt.x_tolerance || spread <= opt.f_tolerance * std::abs(vals[best])) {
      res.converged = true;
      break;
    }

    std::vector<double> centroid(n, 0.0);
    for (std::size_t i = 0; i <= n; ++i) {
      if (i == worst) continue;
      for (std::size_t j = 0; j < n; ++j) centroid[j] += pts[i][j] / static_cast<double>(n);
    }
    auto reflected = at(centroid, pts[worst], -1.0);
    const double fr = f(reflected);
    if (fr < vals[best]) {
      auto expanded = at(centroid, pts[worst], -2.0);
      const double fe = f(expanded);
      if (fe < fr) {
        pts[worst] = std::move(expanded);
        vals[worst] = fe;
      } else {
        pts[worst] = std::move(reflected);
        vals[worst] = fr;
      }
      continue;
    }
    if (fr < vals[second]) {
      pts[worst] = std::move(reflected);
      vals[worst] = fr;
      continue;
    }
    // Contraction, outside or inside.
    auto contracted = fr < vals[worst] ? at(centroid, reflected, 0.5) : at(centroid, pts[worst], 0.5);
    const double fc = f(contracted);
    if (fc < std::min(fr, vals[worst])) {
      pts[worst] = std::move(contracted);
      vals[worst] = fc;
      continue;
    }
    for (std::size_t i = 0; i <= n; ++i) {
      if (i == best) continue;
      pts[i] = at(pts[best], pts[i], 0.5);
      vals[i] = f(pts[i]);
    }
  }
  const auto it = std::min_element(vals.begin(), vals.end());
  res.x = pts[static_cast<std::size_t>(it - vals.begin())];
  res.value = *it;
  return res;
}

// ---------------------------------------------------------------------------
// Fringe fits

enum class Weighting { uniform, inverse_variance };

struct FitGuess {
  double n_bar = 4.0;
  double r2 = 0.9;
  std::optional<double> offset{};  // derived from the data maximum when empty
  double scale = 1.0;
};

struct FitOptions {
  bool fit_scale = false;
  Weighting weighting = Weighting::uniform;
  double pulses_per_point = 0.0;  // needed for inverse-variance weights
  int starts = 5;
  int max_iterations = 10000;
};

struct FitResult {
  double n_bar_hat = 0.0;
  double r2_hat = 0.0;
  double phase_offset_hat = 0.0;  // model evaluated at x + offset
  double scale_hat = 1.0;
  double residual_sse = 0.0;
  double n_bar_stderr = 0.0;
  double r2_stderr = 0.0;
  double phase_offset_stderr = 0.0;
  double scale_stderr = 0.0;  // zero when the scale is fixed
  int iterations = 0;
  bool converged = false;
  std::size_t points = 0;
};

/// Raised when no start converges; carries the best point found.
class FitError : public std::runtime_error {
 public:
  FitError(const std::string& what, FitResult best) : std::runtime_error(what), best_(best) {}
  const FitResult& best() const { return best_; }

 private:
  FitResult best_;
};

namespace detail {

struct Observation {
  double x = 0.0;
  double y = 0.0;
  double weight = 1.0;
  int k = -1;  // -1: mean detected photon number
};

struct NaturalParams {
  double n_bar, r2, offset, scale;
};

inline double logistic(double u) { return 1.0 / (1.0 + std::exp(-u)); }

inline double model_value(const NaturalParams& p, const Observation& o) {
  const auto m = MirrorSpec::from_power(std::clamp(p.r2, 0.0, 1.0 - 1e-15));
  const double t = transmission(m, Phase{o.x + p.offset});
  if (o.k < 0) return p.scale * p.n_bar * t;
  return p.scale * poisson_pmf(o.k, p.n_bar * t);
}

inline double weight_for(double y, const FitOptions& opt) {
  if (opt.weighting == Weighting::uniform) return 1.0;
  if (!(opt.pulses_per_point > 0.0)) {
    throw std::invalid_argument("inverse-variance weights need the number of pulses per point");
  }
  const double n = opt.pulses_per_point;
  return n / std::max(y * (1.0 - y), 1.0 / n);
}

inline std::size_t argmax_signal(std::span<const Observation> obs) {
  // Reconstructed mean signal sum_k k y_k per abscissa, or y for mean curves.
  std::vector<std::pair<double, double>> acc;
  for (const auto& o : obs) {
    const double v = o.k < 0 ? o.y : o.k * o.y;
    auto it = std::find_if(acc.begin(), acc.end(), [&](auto& a) { return a.first == o.x; });
    if (it == acc.end()) {
      acc.emplace_back(o.x, v);
    } else {
      it->second += v;
    }
  }
  std::size_t best = 0;
  for (std::size_t i = 1; i < acc.size(); ++i) {
    if (acc[i].second > acc[best].second) best = i;
  }
  for (std::size_t i = 0; i < obs.size(); ++i) {
    if (obs[i].x == acc[best].first) return i;
  }
  return 0;
}

inline FitResult fit_observations(std::span<const Observation> obs, const FitGuess& guess,
                                  const FitOptions& opt, bool fit_scale) {
  if (obs.empty()) throw std::invalid_argument("fit needs data");
  const auto [ymin, ymax] = std::minmax_element(obs.begin(), obs.end(),
                                                [](auto& a, auto& b) { return a.y < b.y; });
  if (!(ymax->y - ymin->y > 1e-15)) throw std::invalid_argument("fit data are flat");
  if (!(guess.n_bar > 0.0) || !(guess.r2 > 0.0 && guess.r2 < 1.0)) {
    throw std::invalid_argument("initial guess needs n_bar > 0 and 0 < r2 < 1");
  }
  const double x_max = obs[argmax_signal(obs)].x;

  const std::size_t dim = fit_scale ? 4 : 3;
  auto to_natural = [&](std::span<const double> u) {
    return NaturalParams{std::exp(u[0]), logistic(u[1]), u[2], fit_scale ? std::exp(u[3]) : guess.scale};
  };
  auto sse = [&](const NaturalParams& p) {
    double s = 0.0;
    for (const auto& o : obs) {
      const double r = o.y - model_value(p, o);
      s += o.weight * r * r;
    }
    return s;
  };
  auto objective = [&](const std::vector<double>& u) { return sse(to_natural(u)); };

  SimplexOptions sopt;
  sopt.max_iterations = opt.max_iterations;
  const int starts = std::max(1, opt.starts);
  const double r2_lo = std::max(0.05, guess.r2 - 0.1);
  const double r2_hi = std::min(0.99, guess.r2 + 0.05);
  SimplexResult best;
  best.value = std::numeric_limits<double>::infinity();
  for (int s = 0; s < starts; ++s) {
    const double frac = starts == 1 ? 0.5 : static_cast<double>(s) / (starts - 1);
    const double n0 = starts == 1 ? guess.n_bar : guess.n_bar * std::pow(2.0, 2.0 * frac - 1.0);
    const double r0 = starts == 1 ? guess.r2 : r2_lo + frac * (r2_hi - r2_lo);
    const double off0 =
        guess.offset.value_or(peak_position(MirrorSpec::from_power(r0)) - x_max);
    std::vector<double> u0{std::log(n0), std::log(r0 / (1.0 - r0)), off0};
    std::vector<double> step{0.2, 0.5, 2e-3};
    if (fit_scale) {
      u0.push_back(std::log(guess.scale));
      step.push_back(0.1);
    }
    auto r = nelder_mead(objective, u0, step, sopt);
    if (r.value < best.value) best = r;
  }
  // Restart from the best vertex to shake off a collapsed simplex.
  {
    std::vector<double> step{0.02, 0.05, 2e-4};
    if (fit_scale) step.push_back(0.01);
    auto r = nelder_mead(objective, best.x, step, sopt);
    r.iterations += best.iterations;
    if (r.value <= best.value) best = r;
  }

  const NaturalParams p = to_natural(best.x);
  FitResult out;
  out.n_bar_hat = p.n_bar;
  out.r2_hat = p.r2;
  out.phase_offset_hat = p.offset;
  out.scale_hat = p.scale;
  out.residual_sse = best.value;
  out.iterations = best.iterations;
  out.converged = best.converged;
  out.points = obs.size();

  // Standard errors from the Gauss-Newton approximation s^2 (J^T J)^-1.
  const Eigen::Index m = static_cast<Eigen::Index>(obs.size());
  const Eigen::Index d = static_cast<Eigen::Index>(dim);
  Eigen::MatrixXd J(m, d);
  std::array<double, 4> theta{p.n_bar, p.r2, p.offset, p.scale};
  for (Eigen::Index j = 0; j < d; ++j) {
    const double h = 1e-6 * std::max(std::abs(theta[static_cast<std::size_t>(j)]), 1e-3);
    auto plus = theta, minus = theta;
    plus[static_cast<std::size_t>(j)] += h;
    minus[static_cast<std::size_t>(j)] -= h;
    const NaturalParams pp{plus[0], plus[1], plus[2], plus[3]};
    const NaturalParams pm{minus[0], minus[1], minus[2], minus[3]};
    for (Eigen::Index i = 0; i < m; ++i) {
      const auto& o = obs[static_cast<std::size_t>(i)];
      J(i, j) = std::sqrt(o.weight) * (model_value(pp, o) - model_value(pm, o)) / (2.0 * h);
    }
  }
  if (m > d) {
    const double s2 = best.value / static_cast<double>(m - d);
    const Eigen::MatrixXd cov = s2 * (J.transpose() * J).inverse();
    auto se = [&](Eigen::Index j) { return cov(j, j) > 0.0 ? std::sqrt(cov(j, j)) : 0.0; };
    out.n_bar_stderr = se(0);
    out.r2_stderr = se(1);
    out.phase_offset_stderr = se(2);
    if (fit_scale) out.scale_stderr = se(3);
  }
  if (!out.converged) throw FitError("fit did not converge within the iteration limit", out);
  return out;
}

}  // namespace detail

/// Joint fit of scale * p_k^coh(n_bar, r2, x + offset) to every curve; all
/// curves share (n_bar, r2, offset, scale).
inline FitResult fit_pnr_curves(std::span<const FringeCurve> data, const FitGuess& guess = {},
                                const FitOptions& opt = {}) {
  std::vector<int> ks;
  std::vector<detail::Observation> obs;
  for (const auto& c : data) {
    if (!c.k) throw std::invalid_argument("photon-number-resolved fit needs k-tagged curves");
    if (std::find(ks.begin(), ks.end(), *c.k) == ks.end()) ks.push_back(*c.k);
    for (const auto& s : c.samples) {
      obs.push_back({s.l_over_lambda, s.value, detail::weight_for(s.value, opt), *c.k});
    }
  }
  if (ks.size() < 2) throw std::invalid_argument("joint fit needs at least two distinct k curves");
  return detail::fit_observations(obs, guess, opt, opt.fit_scale);
}

/// Independent fit of each curve.
inline std::vector<FitResult> fit_pnr_curves_individually(std::span<const FringeCurve> data,
                                                          const FitGuess& guess = {},
                                                          const FitOptions& opt = {}) {
  std::vector<FitResult> out;
  for (const auto& c : data) {
    if (!c.k) throw std::invalid_argument("photon-number-resolved fit needs k-tagged curves");
    std::vector<detail::Observation> obs;
    for (const auto& s : c.samples) {
      obs.push_back({s.l_over_lambda, s.value, detail::weight_for(s.value, opt), *c.k});
    }
    out.push_back(detail::fit_observations(obs, guess, opt, opt.fit_scale));
  }
  return out;
}

/// Fit n_bar' |T(r2, x + offset)|^2 to a mean-signal curve.
inline FitResult fit_classical(const FringeCurve& curve, const FitGuess& guess = {},
                               const FitOptions& opt = {}) {
  std::vector<detail::Observation> obs;
  for (const auto& s : curve.samples) obs.push_back({s.l_over_lambda, s.value, 1.0, -1});
  FitGuess g = guess;
  g.scale = 1.0;
  return detail::fit_observations(obs, g, opt, false);
}

// ---------------------------------------------------------------------------
// Dip diagnostic

struct DipFlag {
  int k = 0;
  bool dip_present = false;
  double depth = 0.0;
  double threshold = 0.0;
};

/// n_bar lies in (lower, upper]. `consistent` is false when some k below
/// `lower` shows no dip.
struct DipDiagnosis {
  std::vector<DipFlag> flags;
  int lower = 0;
  std::optional<int> upper;
  bool consistent = true;

  bool contains(double n_bar) const { return n_bar > lower && (!upper || n_bar <= *upper); }
};

struct DipOptions {
  std::optional<double> pulses_per_point;  // empty for noiseless curves
  double search_half_width = 0.1 * kFreeSpectralRange;
  double sigma_multiple = 3.0;
  int smoothing = 3;  // moving-average width applied before the search
};

/// For every k >= 1: a dip is a strict interior minimum between the highest
/// points left and right of the fringe maximum, deeper than sigma_multiple
/// standard errors of the depth. The fringe maximum is the argmax of
/// sum_k k y_k over the supplied curves.
inline DipDiagnosis dip_diagnostic(std::span<const FringeCurve> curves, const DipOptions& opt = {}) {
  std::vector<const FringeCurve*> ks;
  for (const auto& c : curves) {
    if (c.k && *c.k >= 1) ks.push_back(&c);
  }
  if (ks.empty()) throw std::invalid_argument("dip diagnostic needs curves with k >= 1");
  std::sort(ks.begin(), ks.end(), [](auto a, auto b) { return *a->k < *b->k; });
  const std::size_t n = ks.front()->samples.size();
  for (auto* c : ks) {
    if (c->samples.size() != n) throw std::invalid_argument("curves do not share a grid");
  }

  std::vector<double> signal(n, 0.0);
  for (auto* c : ks) {
    for (std::size_t i = 0; i < n; ++i) signal[i] += *c->k * c->samples[i].value;
  }
  const auto ci = static_cast<std::size_t>(std::max_element(signal.begin(), signal.end()) - signal.begin());
  if (ci == 0 || ci + 1 == n) throw std::invalid_argument("curve window does not contain a fringe maximum");
  const double xc = ks.front()->samples[ci].l_over_lambda;

  const int half = std::max(0, opt.smoothing / 2);
  DipDiagnosis out;
  for (auto* c : ks) {
    std::vector<double> y(n);
    for (std::size_t i = 0; i < n; ++i) {
      double acc = 0.0;
      int used = 0;
      for (int d = -half; d <= half; ++d) {
        const auto j = static_cast<std::ptrdiff_t>(i) + d;
        if (j < 0 || j >= static_cast<std::ptrdiff_t>(n)) continue;
        acc += c->samples[static_cast<std::size_t>(j)].value;
        ++used;
      }
      y[i] = acc / used;
    }
    std::size_t a = ci, b = ci;
    while (a > 0 && c->samples[a - 1].l_over_lambda >= xc - opt.search_half_width) --a;
    while (b + 1 < n && c->samples[b + 1].l_over_lambda <= xc + opt.search_half_width) ++b;

    std::size_t il = a, ir = b;
    for (std::size_t i = a; i <= ci; ++i) if (y[i] > y[il]) il = i;
    for (std::size_t i = b + 1; i-- > ci;) if (y[i] > y[ir]) ir = i;
    std::size_t im = il;
    for (std::size_t i = il; i <= ir; ++i) if (y[i] < y[im]) im = i;

    DipFlag flag{*c->k, false, 0.0, 0.0};
    if (im != il && im != ir) {
      const std::size_t lo_side = y[il] < y[ir] ? il : ir;
      flag.depth = y[lo_side] - y[im];
      if (opt.pulses_per_point) {
        const double eff = *opt.pulses_per_point * (2 * half + 1);
        auto var = [&](double v) { return std::max(v * (1.0 - v), 0.0) / eff; };
        flag.threshold = opt.sigma_multiple * std::sqrt(var(y[lo_side]) + var(y[im]));
      } else {
        flag.threshold = 1e-12 * std::max(y[lo_side], 1e-300);
      }
      flag.dip_present = flag.depth > flag.threshold;
    }
    out.flags.push_back(flag);
  }

  for (const auto& f : out.flags) {
    if (f.dip_present) out.lower = std::max(out.lower, f.k);
  }
  for (const auto& f : out.flags) {
    if (!f.dip_present && f.k > out.lower && (!out.upper || f.k < *out.upper)) out.upper = f.k;
    if (!f.dip_present && f.k < out.lower) out.consistent = false;
  }
  return out;
}

}  // namespace fpiq
