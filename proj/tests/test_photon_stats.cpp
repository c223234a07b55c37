#include <gtest/gtest.h>

#include <random>
#include <vector>

#include "fpiq/metrology.hpp"
#include "fpiq/photon_stats.hpp"
#include "oracles.hpp"

using namespace fpiq;

namespace {

constexpr double kPoisson4At4 = 0.19536681481316459;
constexpr double kMeanAntiResonance = 0.12456747404844291;  // 4 (0.3/1.7)^2

Phase peak(const MirrorSpec& m) { return Phase{peak_position(m)}; }

TEST(Coherent, PeakCollapsesToPoisson) {
  const auto m = MirrorSpec::from_power(0.7);
  EXPECT_NEAR(p_k_coherent({4.0}, m, peak(m), 4), kPoisson4At4, 1e-15);
  EXPECT_NEAR(classical_mean_coherent({4.0}, m, peak(m)), 4.0, 1e-14);
  EXPECT_NEAR(classical_mean_coherent({4.0}, m, Phase{peak_position(m) + 0.25}), kMeanAntiResonance, 1e-15);
}

TEST(Coherent, MatchesDirectSeries) {
  const auto m = MirrorSpec::from_power(0.7);
  for (double x : {0.0, 0.07, 0.11, 0.2, 0.33}) {
    const double t = transmission(m, Phase{x});
    for (int k = 0; k <= 40; ++k) {
      const double ref = oracle::coherent_series(4.0, t, k);
      EXPECT_NEAR(p_k_coherent({4.0}, m, Phase{x}, k), ref, 1e-10 * std::max(ref, 1e-300) + 1e-300)
          << x << " k=" << k;
    }
  }
}

TEST(Coherent, NormalisationAndMean) {
  for (double r2 : {0.5, 0.7, 0.9, 0.99}) {
    const auto m = MirrorSpec::from_power(r2);
    for (double nbar : {0.5, 4.0, 12.0}) {
      const int K = coherent_truncation(nbar);
      for (int i = 0; i < 200; ++i) {
        const Phase p{i / 400.0};
        double sum = 0.0, mean = 0.0;
        for (int k = 0; k <= K; ++k) {
          const double v = p_k_coherent({nbar}, m, p, k);
          sum += v;
          mean += k * v;
        }
        ASSERT_NEAR(sum, 1.0, 1e-10);
        ASSERT_NEAR(mean, classical_mean_coherent({nbar}, m, p), 1e-10);
      }
    }
  }
}

TEST(Coherent, TruncationRule) {
  const int K = coherent_truncation(4.0);
  EXPECT_LT(1.0 - oracle::poisson_cdf(K, 4.0), 1e-12);
  EXPECT_GE(1.0 - oracle::poisson_cdf(K - 1, 4.0), 1e-12);
  EXPECT_LE(K, static_cast<int>(4.0 + 12.0 * 2.0 + 12.0));
  EXPECT_EQ(coherent_truncation(0.0), 0);
}

TEST(Coherent, RejectsBadInput) {
  const auto m = MirrorSpec::from_power(0.7);
  EXPECT_THROW(p_k_coherent({-1.0}, m, Phase{0.0}, 0), std::invalid_argument);
  EXPECT_THROW(p_k_coherent({1.0}, m, Phase{0.0}, -1), std::invalid_argument);
}

TEST(Fock, PeakPowerLaw) {
  const auto m = MirrorSpec::from_power(0.7);
  for (double x : {0.0, 0.05, 0.2}) {
    const double t = transmission(m, Phase{x});
    EXPECT_NEAR(p_k_fock({4}, m, Phase{x}, 4), std::pow(t, 4), 1e-15);
    EXPECT_NEAR(p_k_fock({1}, m, Phase{x}, 1), t, 1e-15);
    EXPECT_NEAR(p_k_fock({1}, m, Phase{x}, 0), 1.0 - t, 1e-14);
  }
}

TEST(Fock, KAboveNIsAnError) {
  const auto m = MirrorSpec::from_power(0.7);
  EXPECT_THROW(p_k_fock({3}, m, Phase{0.0}, 4), std::invalid_argument);
  EXPECT_THROW(p_k_fock({171}, m, Phase{0.0}, 0), std::invalid_argument);
  EXPECT_THROW(p_k(InputState{FockInput{2}}, m, Phase{0.0}, 3), std::invalid_argument);
}

TEST(Fock, NormalisationAndMean) {
  for (double r2 : {0.5, 0.7, 0.9, 0.99}) {
    const auto m = MirrorSpec::from_power(r2);
    for (int n = 0; n <= 20; ++n) {
      for (int i = 0; i < 100; ++i) {
        const Phase p{i / 200.0};
        double sum = 0.0, mean = 0.0;
        for (int k = 0; k <= n; ++k) {
          const double v = p_k_fock({n}, m, p, k);
          sum += v;
          mean += k * v;
        }
        ASSERT_NEAR(sum, 1.0, 1e-12);
        ASSERT_NEAR(mean, mean_fock({n}, m, p), 1e-10);
      }
    }
  }
}

TEST(Fock, MatchesBernoulliMonteCarlo) {
  const auto m = MirrorSpec::from_power(0.7);
  std::mt19937_64 rng(99);
  std::uniform_real_distribution<double> ux(0.0, 0.5);
  const int trials = 200000;
  for (int i = 0; i < 5; ++i) {
    const double x = ux(rng);
    const double t = transmission(m, Phase{x});
    for (int k = 0; k <= 3; ++k) {
      const double p = p_k_fock({3}, m, Phase{x}, k);
      const double mc = oracle::binomial_mc(3, t, k, trials, 1000 + i);
      EXPECT_NEAR(mc, p, 4.0 * std::sqrt(p * (1 - p) / trials) + 1e-12) << x << " k=" << k;
    }
  }
}

TEST(Fock, MeanEqualsCoherentMean) {
  const auto m = MirrorSpec::from_power(0.7);
  EXPECT_EQ(mean_fock({0}, m, Phase{0.1}), 0.0);
  EXPECT_NEAR(mean_fock({4}, m, peak(m)), 4.0, 1e-14);
  for (int i = 0; i < 100; ++i) {
    const Phase p{i / 100.0};
    EXPECT_DOUBLE_EQ(mean_fock({4}, m, p), classical_mean_coherent({4.0}, m, p));
  }
}

TEST(Complement, AccurateNearCertainty) {
  const auto m = MirrorSpec::from_power(0.9);
  const Phase p{peak_position(m) + 1e-7};
  const InputState f = FockInput{4};
  const double c = p_k_complement(f, m, p, 4);
  const double r = reflection(m, p);
  EXPECT_GT(c, 0.0);
  EXPECT_NEAR(c, 1.0 - std::pow(1.0 - r, 4), 1e-6 * c);
  EXPECT_NEAR(p_k_complement(f, m, Phase{0.2}, 2), 1.0 - p_k(f, m, Phase{0.2}, 2), 1e-15);
  const InputState coh = CoherentInput{4.0};
  EXPECT_NEAR(p_k_complement(coh, m, Phase{0.3}, 0), 1.0 - p_k(coh, m, Phase{0.3}, 0), 1e-14);
}

TEST(Derivative, ProbabilitiesMatchFiniteDifferences) {
  const auto m = MirrorSpec::from_power(0.7);
  const std::vector<InputState> inputs{CoherentInput{4.0}, FockInput{3}, FockInput{1}};
  for (const auto& s : inputs) {
    const int kmax = std::holds_alternative<FockInput>(s) ? std::get<FockInput>(s).n : 8;
    for (int k = 0; k <= kmax; ++k) {
      for (double x : {0.03, 0.09, 0.15, 0.31}) {
        auto f = [&](double y) { return p_k(s, m, Phase{y}, k); };
        const double d = dp_k_dl(s, m, Phase{x}, k);
        EXPECT_NEAR(d, oracle::five_point(f, x, 1e-5), 1e-6 * (std::abs(d) + 1e-3)) << k << " " << x;
      }
    }
  }
}

// Dip rule: a strict local minimum at the fringe maximum iff k < mean.
TEST(DipRule, CenterMinimumIffKBelowMean) {
  const auto m = MirrorSpec::from_power(0.7);
  const double x0 = peak_position(m), h = 1e-3;
  auto center_is_min = [&](const InputState& s, int k) {
    const double c = p_k(s, m, Phase{x0}, k);
    return c < p_k(s, m, Phase{x0 - h}, k) && c < p_k(s, m, Phase{x0 + h}, k);
  };
  auto center_is_max = [&](const InputState& s, int k) {
    const double c = p_k(s, m, Phase{x0}, k);
    return c > p_k(s, m, Phase{x0 - h}, k) && c > p_k(s, m, Phase{x0 + h}, k);
  };
  for (int k = 1; k <= 8; ++k) {
    const InputState coh = CoherentInput{4.0};
    if (k < 4) {
      EXPECT_TRUE(center_is_min(coh, k)) << k;
    } else {
      EXPECT_TRUE(center_is_max(coh, k)) << k;
    }
  }
  for (int k = 1; k <= 3; ++k) {
    EXPECT_TRUE(center_is_min(FockInput{4}, k)) << k;
  }
  EXPECT_TRUE(center_is_max(FockInput{4}, 4));
}

TEST(FringeScan, ShapesAndValidation) {
  const auto m = MirrorSpec::from_power(0.7);
  const std::vector<int> ks{1, 2, 3};
  const auto curves = fringe_scan(FockInput{3}, m, PhaseGrid{0.0, 0.5, 501}, ks, true);
  ASSERT_EQ(curves.size(), 4u);
  EXPECT_EQ(curves[0].k, 1);
  EXPECT_FALSE(curves[3].k.has_value());
  EXPECT_EQ(curves[2].samples.size(), 501u);
  EXPECT_EQ(curves[2].samples.back().l_over_lambda, 0.5);

  const auto single = fringe_scan(CoherentInput{4.0}, m, PhaseGrid{0.1, 0.1, 1}, ks, false);
  EXPECT_EQ(single[0].samples.size(), 1u);

  EXPECT_THROW(fringe_scan(CoherentInput{4.0}, m, PhaseGrid{0, 1, 10}, {}, false), std::invalid_argument);
  EXPECT_THROW(fringe_scan(CoherentInput{4.0}, m, PhaseGrid{1, 0, 10}, ks, false), std::invalid_argument);
  EXPECT_THROW(fringe_scan(CoherentInput{4.0}, m, PhaseGrid{0, 1, 0}, ks, false), std::invalid_argument);

  // The coherent mean for n_bar = 4 is four times the single-photon curve.
  const std::vector<int> one{1};
  const auto mean = fringe_scan(CoherentInput{4.0}, m, PhaseGrid{0, 0.5, 101}, {}, true)[0];
  const auto f1 = fringe_scan(FockInput{1}, m, PhaseGrid{0, 0.5, 101}, one, false)[0];
  for (std::size_t i = 0; i < 101; ++i) EXPECT_NEAR(mean.samples[i].value, 4.0 * f1.samples[i].value, 1e-14);
}

TEST(Narrowing, FockPeakWidthShrinksWithN) {
  const auto m = MirrorSpec::from_power(0.7);
  double previous = 1.0;
  for (int n = 1; n <= 6; ++n) {
    const std::vector<int> ks{n};
    const auto c = fringe_scan(FockInput{n}, m, PhaseGrid{-0.25, 0.75, 20001}, ks, false)[0];
    const double w = measure_fwhm(c);
    EXPECT_LT(w, previous) << n;
    previous = w;
  }
}

}  // namespace
