#pragma once

// Effective beam-splitter amplitudes of a symmetric two-mirror Fabry-Perot
// cavity, as functions of the dimensionless cavity length L/lambda.

#include <cmath>
#include <complex>
#include <numbers>
#include <stdexcept>
#include <string>

namespace fpiq {

using ComplexAmp = std::complex<double>;

/// Length of one free spectral range in units of L/lambda. |T|^2 has period
/// pi in phi = 2*pi*L/lambda.
inline constexpr double kFreeSpectralRange = 0.5;

/// Identical lossless mirrors described by their real amplitude reflectivity.
class MirrorSpec {
 public:
  /// Throws std::invalid_argument unless 0 <= r_amp < 1.
  static MirrorSpec from_amplitude(double r_amp) {
    if (!(r_amp >= 0.0 && r_amp < 1.0)) {
      throw std::invalid_argument("mirror amplitude reflectivity must lie in [0, 1), got " +
                                  std::to_string(r_amp));
    }
    return MirrorSpec(r_amp);
  }

  /// Power reflectivity |r|^2, same bounds as from_amplitude.
  static MirrorSpec from_power(double r2) {
    if (!(r2 >= 0.0 && r2 < 1.0)) {
      throw std::invalid_argument("mirror power reflectivity must lie in [0, 1), got " +
                                  std::to_string(r2));
    }
    MirrorSpec m(std::sqrt(r2));
    m.r2_ = r2;
    return m;
  }

  double r_amp() const { return r_amp_; }
  double r2() const { return r2_; }
  /// sqrt(1 - |r|^2), the mirror-induced phase.
  double mirror_phase() const { return std::sqrt(1.0 - r2_); }

  friend bool operator==(const MirrorSpec&, const MirrorSpec&) = default;

 private:
  explicit MirrorSpec(double r_amp) : r_amp_(r_amp), r2_(r_amp * r_amp) {}

  double r_amp_;
  double r2_;
};

/// Cavity length in units of the wavelength.
struct Phase {
  double l_over_lambda = 0.0;

  double phi() const { return 2.0 * std::numbers::pi * l_over_lambda; }
  static Phase from_phi(double phi) { return Phase{phi / (2.0 * std::numbers::pi)}; }
};

namespace detail {

// theta = 2*phi - 2*sqrt(1 - |r|^2). |T|^2 depends on the phase only through
// cos(theta).
inline double fringe_argument(const MirrorSpec& m, Phase p) {
  return 4.0 * std::numbers::pi * p.l_over_lambda - 2.0 * m.mirror_phase();
}

// |r|^2 exp(i theta) - 1
inline ComplexAmp cavity_denominator(const MirrorSpec& m, Phase p) {
  return m.r2() * std::polar(1.0, fringe_argument(m, p)) - 1.0;
}

// |denominator|^2 = (1 - R)^2 + 4 R sin^2(theta/2), free of cancellation near
// resonance.
inline double cavity_denominator_norm(const MirrorSpec& m, Phase p) {
  const double R = m.r2();
  const double half = std::sin(0.5 * fringe_argument(m, p));
  return (1.0 - R) * (1.0 - R) + 4.0 * R * half * half;
}

}  // namespace detail

/// Transmission amplitude T(r, phi).
inline ComplexAmp transfer_t(const MirrorSpec& m, Phase p) {
  const double s = m.mirror_phase();
  const ComplexAmp numerator = (1.0 - m.r2()) * std::polar(1.0, -2.0 * s);
  return numerator / detail::cavity_denominator(m, p);
}

/// Reflection amplitude R(r, phi).
inline ComplexAmp transfer_r(const MirrorSpec& m, Phase p) {
  const double s = m.mirror_phase();
  const double phi = p.phi();
  const ComplexAmp bracket = std::polar(1.0, -phi) - std::polar(1.0, phi - 2.0 * s);
  return m.r_amp() * std::polar(1.0, -s) * bracket / detail::cavity_denominator(m, p);
}

/// |T|^2 in the real rational form (1-R)^2 / ((1-R)^2 + 4R sin^2(theta/2)).
inline double transmission(const MirrorSpec& m, Phase p) {
  const double one_minus = 1.0 - m.r2();
  return one_minus * one_minus / detail::cavity_denominator_norm(m, p);
}

/// |R|^2 = 4R sin^2(theta/2) / den. Accurate where 1 - |T|^2 would cancel.
inline double reflection(const MirrorSpec& m, Phase p) {
  const double half = std::sin(0.5 * detail::fringe_argument(m, p));
  return 4.0 * m.r2() * half * half / detail::cavity_denominator_norm(m, p);
}

/// d|T|^2 / d(L/lambda).
inline double d_transmission_dl(const MirrorSpec& m, Phase p) {
  const double R = m.r2();
  const double one_minus = 1.0 - R;
  const double den = detail::cavity_denominator_norm(m, p);
  // d den / d theta = 2 R sin(theta); d theta / d(L/lambda) = 4 pi.
  const double dden = 2.0 * R * std::sin(detail::fringe_argument(m, p)) * 4.0 * std::numbers::pi;
  return -one_minus * one_minus * dden / (den * den);
}

/// True when the phase sits on a fringe extremum, where d|T|^2/dL vanishes.
/// Matches up to the rounding of theta itself.
inline bool is_stationary(const MirrorSpec& m, Phase p) {
  if (m.r2() == 0.0) return true;
  const double theta = detail::fringe_argument(m, p);
  return std::abs(std::sin(theta)) <= 1e-13 * (1.0 + std::abs(theta));
}

/// Position of the transmission maximum closest to L/lambda = 0 from above.
/// Shifts left as the reflectivity grows.
inline double peak_position(const MirrorSpec& m) {
  return m.mirror_phase() / (2.0 * std::numbers::pi);
}

/// Nearest transmission maximum to x.
inline double nearest_peak(const MirrorSpec& m, double x) {
  const double base = peak_position(m);
  return base + kFreeSpectralRange * std::round((x - base) / kFreeSpectralRange);
}

/// Exact full width at half maximum of the |T|^2 fringe, in L/lambda.
/// Throws when the fringe never falls to one half (R below 3 - 2*sqrt(2)).
inline double classical_fwhm(const MirrorSpec& m) {
  const double R = m.r2();
  const double arg = (R > 0.0) ? (1.0 - R) / (2.0 * std::sqrt(R)) : 2.0;
  if (arg > 1.0) {
    throw std::invalid_argument("fringe contrast too low for a half-maximum width");
  }
  return std::asin(arg) / std::numbers::pi;
}

}  // namespace fpiq
