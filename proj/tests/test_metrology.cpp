#include <gtest/gtest.h>

#include <array>
#include <random>
#include <vector>

#include "fpiq/metrology.hpp"
#include "oracles.hpp"

using namespace fpiq;

namespace {

// Fixtures frozen from an independent numpy evaluation (2e6-point scan with
// numerical derivatives).
constexpr double kShotMinN4R07 = 0.0186822837986725;
constexpr double kFock44MinR07 = 0.00713349529876577;
constexpr double kFockOverShotR07 = 0.381832080897553;
constexpr std::array<double, 8> kCoherentKMinN4R07{0.0383498281262389, 0.0577950603252209,
                                                   0.0532204885066181, 0.0459504957664268,
                                                   0.0444855611721116, 0.0474867505563381,
                                                   0.0554319774000093, 0.0701622986753964};
constexpr double kSigmaClN39R091 = 0.0106821932277502;
constexpr std::array<double, 7> kSigmaRatioN39R091{0.615135545720995, 0.869295697779755, 1.29477672766596,
                                                   1.82546251709229,  2.37289551509952,  2.89689634641863,
                                                   3.38808373080985};

const MirrorSpec kR07 = MirrorSpec::from_power(0.7);

TEST(Binary, DirectSubstitution) {
  EXPECT_DOUBLE_EQ(*sensitivity_binary(0.5, 1.0), 0.5);
  EXPECT_DOUBLE_EQ(*sensitivity_binary(0.5, -1.0), 0.5);
  EXPECT_FALSE(sensitivity_binary(0.0, 1.0));
  EXPECT_FALSE(sensitivity_binary(1.0, 1.0));
  EXPECT_FALSE(sensitivity_binary(0.3, 0.0));
}

TEST(ShotNoise, UndefinedAtExtremaAndScalesAsInverseRoot) {
  const Phase top{peak_position(kR07)};
  EXPECT_FALSE(sensitivity_coherent_mean({4.0}, kR07, top));
  EXPECT_FALSE(sensitivity_coherent_mean({4.0}, kR07, Phase{top.l_over_lambda + 0.25}));
  EXPECT_THROW(sensitivity_coherent_mean({0.0}, kR07, Phase{0.1}), std::invalid_argument);
  for (double x : {0.01, 0.08, 0.2, 0.4}) {
    const auto a = sensitivity_coherent_mean({4.0}, kR07, Phase{x});
    const auto b = sensitivity_coherent_mean({16.0}, kR07, Phase{x});
    ASSERT_TRUE(a && b);
    EXPECT_NEAR(*b, *a / 2.0, 1e-15 * *a);
  }
}

TEST(ShotNoise, MinimumMatchesFixture) {
  const auto r = min_sensitivity(SensitivitySpec::coherent_mean(4.0), kR07);
  EXPECT_NEAR(r.delta_l_over_lambda, kShotMinN4R07, 1e-12);
  EXPECT_GT(std::abs(r.l_over_lambda - peak_position(kR07)), 1e-3);
}

TEST(FockK, MatchesClosedPowerForm) {
  // n = k = 4: |T|^4 sqrt(1 - |T|^8) / |d|T|^8/dL|.
  for (double x : {0.02, 0.06, 0.1, 0.3}) {
    const double t = transmission(kR07, Phase{x});
    const double dt = d_transmission_dl(kR07, Phase{x});
    const double expected = t * t * std::sqrt(1.0 - std::pow(t, 4)) / std::abs(4.0 * std::pow(t, 3) * dt);
    const auto got = sensitivity(SensitivitySpec::fock_k(4, 4), kR07, Phase{x});
    ASSERT_TRUE(got);
    EXPECT_NEAR(*got, expected, 1e-12 * expected);
  }
}

TEST(FockK, BeatsShotNoise) {
  const auto f = min_sensitivity(SensitivitySpec::fock_k(4, 4), kR07);
  const auto c = min_sensitivity(SensitivitySpec::coherent_mean(4.0), kR07);
  EXPECT_NEAR(f.delta_l_over_lambda, kFock44MinR07, 1e-9);
  EXPECT_LT(f.delta_l_over_lambda, c.delta_l_over_lambda);
  EXPECT_NE(f.l_over_lambda, peak_position(kR07));
}

TEST(FockK, SingleIsBelowShotNoisePointwise) {
  for (int i = 1; i < 500; ++i) {
    const Phase p{i / 1000.0};
    const auto f = sensitivity(SensitivitySpec::fock_k(1, 1), kR07, p);
    const auto c = sensitivity(SensitivitySpec::coherent_mean(1.0), kR07, p);
    if (f && c) {
      EXPECT_LE(*f, *c * (1 + 1e-12));
    }
  }
}

TEST(CoherentK, NeverBeatsShotNoise) {
  const auto grid = PhaseGrid{0.0, 0.5, 20001}.values();
  for (int k = 1; k <= 8; ++k) {
    for (double x : grid) {
      const auto pk = sensitivity(SensitivitySpec::coherent_k(4.0, k), kR07, Phase{x});
      const auto sn = sensitivity(SensitivitySpec::coherent_mean(4.0), kR07, Phase{x});
      if (pk && sn) {
        ASSERT_GE(*pk, *sn) << k << " " << x;
      }
    }
    const auto mk = min_sensitivity(SensitivitySpec::coherent_k(4.0, k), kR07);
    EXPECT_NEAR(mk.delta_l_over_lambda, kCoherentKMinN4R07[static_cast<std::size_t>(k - 1)], 1e-10) << k;
  }
}

TEST(Minimum, AgreesWithBruteForceScan) {
  for (const auto spec : {SensitivitySpec::coherent_mean(4.0), SensitivitySpec::fock_k(3, 2),
                          SensitivitySpec::coherent_k(2.0, 1)}) {
    auto f = [&](double x) {
      return sensitivity(spec, kR07, Phase{x}).value_or(std::numeric_limits<double>::infinity());
    };
    const auto [x, v] = oracle::scan_min(f, 0.0, 0.5, 1000001);
    const auto r = min_sensitivity(spec, kR07);
    EXPECT_LE(r.delta_l_over_lambda, v * (1 + 1e-12));
    EXPECT_NEAR(r.delta_l_over_lambda, v, 1e-6 * v);
    (void)x;
  }
}

TEST(Minimum, FockRatioIsConstantInN) {
  const auto rows = minima_table(kR07, 1, 10);
  ASSERT_EQ(rows.size(), 10u);
  for (const auto& r : rows) {
    EXPECT_NEAR(r.ratio(), kFockOverShotR07, 1e-7) << r.n;
    EXPECT_LT(r.fock.delta_l_over_lambda, r.coherent.delta_l_over_lambda);
  }
  // Infimum at the peak: 1 / sqrt(n a) with a = 4R/(1-R)^2 per unit phase.
  const double a = 4.0 * 0.7 / (0.3 * 0.3);
  for (const auto& r : rows) {
    const double limit = 1.0 / (std::sqrt(r.n * a) * 2.0 * std::numbers::pi * 2.0);
    EXPECT_NEAR(r.fock.delta_l_over_lambda, limit, 1e-7 * limit) << r.n;
  }
  EXPECT_THROW(minima_table(kR07, 0, 3), std::invalid_argument);
}

TEST(Sensitivity, PeriodicInPhase) {
  for (double x : {0.013, 0.21, 0.37}) {
    const auto a = sensitivity(SensitivitySpec::coherent_k(4.0, 2), kR07, Phase{x});
    const auto b = sensitivity(SensitivitySpec::coherent_k(4.0, 2), kR07, Phase{x + 0.5});
    EXPECT_NEAR(*a, *b, 1e-9 * *a);
  }
}

TEST(Sensitivity, ScanMarksUndefinedPoints) {
  const double x0 = peak_position(kR07);
  const auto c = sensitivity_scan(SensitivitySpec::coherent_mean(4.0), kR07, PhaseGrid{x0, x0 + 0.5, 3});
  ASSERT_EQ(c.samples.size(), 3u);
  EXPECT_FALSE(c.samples[0].delta_l_over_lambda);
  EXPECT_FALSE(c.samples[1].delta_l_over_lambda);
  EXPECT_FALSE(c.samples[2].delta_l_over_lambda);
}

TEST(PeakStats, SymmetricTriangle) {
  std::vector<double> xs, ys;
  for (int i = -50; i <= 50; ++i) {
    xs.push_back(0.3 + i * 0.001);
    ys.push_back(51.0 - std::abs(i));
  }
  const auto s = peak_stats(xs, ys, Window{0.2, 0.4});
  EXPECT_NEAR(s.center, 0.3, 1e-14);
  EXPECT_GT(s.sigma, 0.0);
  EXPECT_NEAR(s.standard_error(), s.sigma / std::sqrt(s.total_counts), 1e-18);
}

TEST(PeakStats, Errors) {
  const std::vector<double> xs{0.0, 1.0, 2.0}, zeros{0.0, 0.0, 0.0}, spike{0.0, 5.0, 0.0}, neg{1.0, -1.0, 1.0};
  EXPECT_THROW(peak_stats(xs, zeros, Window{0, 2}), std::invalid_argument);
  EXPECT_THROW(peak_stats(xs, spike, Window{0, 2}), std::invalid_argument);
  EXPECT_THROW(peak_stats(xs, neg, Window{0, 2}), std::invalid_argument);
  EXPECT_THROW(peak_stats(xs, spike, Window{5, 6}), std::invalid_argument);
}

TEST(PeakStats, ResolutionTableFixture) {
  const auto m = MirrorSpec::from_power(0.91);
  const double x0 = peak_position(m);
  const std::vector<int> ks{1, 2, 3, 4, 5, 6, 7};
  const auto curves = fringe_scan(CoherentInput{3.9}, m, PhaseGrid{x0 - 0.25, x0 + 0.25, 20001}, ks, true);
  const auto w = resolution_window(m, x0);
  const auto cl = peak_stats(curves.back(), w);
  EXPECT_NEAR(cl.sigma, kSigmaClN39R091, 1e-12);
  double previous = std::numeric_limits<double>::infinity();
  for (int k = 1; k <= 7; ++k) {
    const auto s = peak_stats(curves[static_cast<std::size_t>(k - 1)], w);
    EXPECT_NEAR(cl.sigma / s.sigma, kSigmaRatioN39R091[static_cast<std::size_t>(k - 1)], 1e-10) << k;
    EXPECT_LT(s.sigma, previous);
    previous = s.sigma;
  }
}

TEST(PeakStats, NarrowsWithReflectivity) {
  double previous = 1.0;
  for (double r2 : {0.5, 0.7, 0.9}) {
    const auto m = MirrorSpec::from_power(r2);
    const double x0 = peak_position(m);
    const auto c = fringe_scan(CoherentInput{1.0}, m, PhaseGrid{x0 - 0.25, x0 + 0.25, 5001}, {}, true)[0];
    const auto s = peak_stats(c, Window{x0 - 0.25, x0 + 0.25});
    EXPECT_LT(s.sigma, previous);
    previous = s.sigma;
  }
}

TEST(Fsr, SymmetricCaseAndCountScaling) {
  const PeakStats a{0.1, 0.02, 400.0, {}}, b{0.6, 0.02, 400.0, {}};
  const auto e = fsr_uncertainty(a, b);
  EXPECT_DOUBLE_EQ(e.delta_l, 0.5);
  EXPECT_NEAR(e.sigma_delta_l, std::sqrt(2.0) * 0.02 / 20.0, 1e-16);
  EXPECT_NEAR(required_counts(0.02, 0.001) / required_counts(0.01, 0.001), 4.0, 1e-12);
  EXPECT_THROW(fsr_uncertainty(a, a), std::invalid_argument);
  EXPECT_THROW(required_counts(0.02, 0.0), std::invalid_argument);
  const PeakStats a4{0.1, 0.02, 1600.0, {}}, b4{0.6, 0.02, 1600.0, {}};
  EXPECT_NEAR(fsr_uncertainty(a4, b4).sigma_delta_l, e.sigma_delta_l / 2.0, 1e-16);
}

TEST(Finesse, ClassicalCurveAgainstApproximation) {
  for (double r2 : {0.7, 0.9}) {
    const auto m = MirrorSpec::from_power(r2);
    const auto c = fringe_scan(CoherentInput{1.0}, m, PhaseGrid{0.0, 1.0, 200001}, {}, true)[0];
    const double exact = kFreeSpectralRange / classical_fwhm(m);
    EXPECT_NEAR(finesse(c), exact, 1e-4 * exact);
    EXPECT_NEAR(finesse(c), finesse_classical_approx(m), 0.05 * finesse_classical_approx(m));
  }
  EXPECT_NEAR(finesse_classical_approx(kR07), 8.76148330971, 1e-10);
  EXPECT_THROW(finesse_classical_approx(MirrorSpec::from_power(0.5)), std::invalid_argument);
}

TEST(Finesse, FockPeaksNarrowWithUnchangedFsr) {
  const auto grid = PhaseGrid{0.0, 1.0, 100001};
  double previous = 0.0, fsr0 = 0.0;
  for (int n = 1; n <= 4; ++n) {
    const std::vector<int> ks{n};
    const auto c = fringe_scan(FockInput{n}, kR07, grid, ks, false)[0];
    const auto maxima = find_fringe_maxima(c.xs(), c.values());
    ASSERT_EQ(maxima.size(), 2u);
    const double fsr = maxima[1].position - maxima[0].position;
    if (n == 1) fsr0 = fsr;
    EXPECT_NEAR(fsr, fsr0, 1e-9);
    EXPECT_GT(finesse(c), previous);
    previous = finesse(c);
  }
  const auto single = fringe_scan(CoherentInput{1.0}, kR07, PhaseGrid{0.0, 0.4, 1001}, {}, true)[0];
  EXPECT_THROW(finesse(single), std::invalid_argument);
}

}  // namespace
