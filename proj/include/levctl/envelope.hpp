#pragma once

#include <array>
#include <cmath>
#include <complex>

#include "levctl/constants.hpp"

// Slowly-varying-envelope model of the two coupled oscillation modes in
// the frame rotating at the modulation frequency. The state (a, b) obeys
//
//   i d/dt (a, b)^T = H (a, b)^T,
//   H = 1/2 [[delta - i*gamma_a,      -A e^{-i psi}],
//            [-A e^{+i psi},  -delta - i*gamma_b]].
//
// |a|^2 and |b|^2 are the mode energies in units of k_B*T0. With
// gamma_a = gamma_b and psi = 0 this is the textbook two-level form; the
// asymmetric damping slot carries feedback cooling applied to one mode.
//
// Sign conventions (fixed so the control protocol traces close):
//  * psi = 0 makes the Bloch rotation axis (-A, 0, delta)/Omega_R: on
//    resonance the vector rotates about the e1-axis and e1 is conserved.
//  * psi = pi/2 tilts the axis to (0, -A, delta)/Omega_R: rotation about
//    e2, so switching the modulation phase by pi/2 swaps the rotation
//    axis exactly as the transfer protocol requires.
//  * Absolute phases of a and b are frame-dependent; only populations and
//    the relative phase are physical.

namespace levctl::envelope {

using complexd = std::complex<double>;

struct EnvelopeState {
  complexd a{0.0, 0.0};  // x-mode amplitude, |a|^2 in k_B*T0 units
  complexd b{0.0, 0.0};  // y-mode amplitude
  double t = 0.0;        // s

  double population() const { return std::norm(a) + std::norm(b); }
};

struct EnvelopeParams {
  double delta = 0.0;     // rad/s, omega_mod - (omega_y - omega_x)
  double coupling = 0.0;  // rad/s, A = phi0 * delta_omega
  double gamma_a = 0.0;   // rad/s, population decay of the x-mode
  double gamma_b = 0.0;   // rad/s, population decay of the y-mode
  double psi = 0.0;       // rad, drive phase
};

struct BlochVector {
  double e1 = 0.0;
  double e2 = 0.0;
  double e3 = 0.0;
  double norm = 0.0;  // total population in k_B*T0 units
  bool degenerate = false;
};

struct Mat2c {
  complexd m00, m01, m10, m11;

  EnvelopeState apply(const EnvelopeState& s, double dt_adv) const {
    return {m00 * s.a + m01 * s.b, m10 * s.a + m11 * s.b, s.t + dt_adv};
  }

  Mat2c operator*(const Mat2c& o) const {
    return {m00 * o.m00 + m01 * o.m10, m00 * o.m01 + m01 * o.m11,
            m10 * o.m00 + m11 * o.m10, m10 * o.m01 + m11 * o.m11};
  }

  complexd det() const { return m00 * m11 - m01 * m10; }
};

/// Generalized Rabi frequency sqrt(A^2 + delta^2).
inline double rabi_frequency(const EnvelopeParams& p) {
  return std::hypot(p.coupling, p.delta);
}

/// Exact propagator U with state(t+dt) = U state(t), U = exp(-i dt H).
///
/// H splits as c*I + K with c = -i(gamma_a+gamma_b)/4 and traceless
/// K = [[w, k],[k', -w]], w = delta/2 - i(gamma_a-gamma_b)/4. Since
/// K^2 = mu^2 I with mu^2 = w^2 + (A/2)^2, the exponential is closed-form
/// even for the non-Hermitian (asymmetric damping) case; this is the
/// eigendecomposition of the constant 2x2 matrix written out explicitly.
inline Mat2c propagator(const EnvelopeParams& p, double dt) {
  const complexd w(0.5 * p.delta, -0.25 * (p.gamma_a - p.gamma_b));
  const double h = 0.5 * p.coupling;
  const complexd k01 = -h * std::polar(1.0, -p.psi);
  const complexd k10 = -h * std::polar(1.0, +p.psi);
  const complexd mu = std::sqrt(w * w + complexd(h * h, 0.0));
  const complexd arg = mu * dt;

  complexd cosf, sincf;  // cos(mu dt), sin(mu dt)/mu
  if (std::abs(arg) < 1e-8) {
    const complexd a2 = arg * arg;
    cosf = 1.0 - 0.5 * a2;
    sincf = dt * (1.0 - a2 / 6.0);
  } else {
    cosf = std::cos(arg);
    sincf = std::sin(arg) / mu;
  }

  const double damp = std::exp(-0.25 * (p.gamma_a + p.gamma_b) * dt);
  const complexd i_sinc = complexd(0.0, 1.0) * sincf;
  return {damp * (cosf - i_sinc * w), damp * (-i_sinc * k01),
          damp * (-i_sinc * k10), damp * (cosf + i_sinc * w)};
}

inline EnvelopeState propagate(const EnvelopeState& s, const EnvelopeParams& p, double dt) {
  return propagator(p, dt).apply(s, dt);
}

/// Bloch vector of a normalized two-mode state: e1 = 2 Re(a* b)/N,
/// e2 = 2 Im(a* b)/N, e3 = (|a|^2 - |b|^2)/N. N = 0 is flagged, not thrown.
inline BlochVector bloch_vector(const EnvelopeState& s) {
  const double n = s.population();
  if (!(n > 0.0)) return {0.0, 0.0, 0.0, 0.0, true};
  const complexd cross = std::conj(s.a) * s.b;
  return {2.0 * cross.real() / n, 2.0 * cross.imag() / n,
          (std::norm(s.a) - std::norm(s.b)) / n, n, false};
}

/// Population decay rates -2 Im(lambda) of the two eigenvalues of H.
/// Equal damping gives {gamma, gamma}; A = 0 gives {gamma_a, gamma_b};
/// strong coupling pulls both to the mean (gamma_a+gamma_b)/2.
inline std::array<double, 2> decay_rates(const EnvelopeParams& p) {
  const complexd w(0.5 * p.delta, -0.25 * (p.gamma_a - p.gamma_b));
  const double h = 0.5 * p.coupling;
  const complexd mu = std::sqrt(w * w + complexd(h * h, 0.0));
  const double base = 0.5 * (p.gamma_a + p.gamma_b);
  return {base - 2.0 * mu.imag(), base + 2.0 * mu.imag()};
}

/// Mode energies (E_x, E_y) in joules for a bath temperature t0_kelvin.
inline std::array<double, 2> mode_energies(const EnvelopeState& s, double t0_kelvin) {
  const double kbt = constants::k_boltzmann * t0_kelvin;
  return {std::norm(s.a) * kbt, std::norm(s.b) * kbt};
}

/// State with given mode energies (k_B*T0 units) and oscillation phases.
/// phase_x/phase_y follow x(t) = X cos(omega t + phase), which maps to a
/// complex amplitude X e^{-i phase}.
inline EnvelopeState state_from_energies(double e_x_kbt, double e_y_kbt,
                                         double phase_x = 0.0, double phase_y = 0.0,
                                         double t = 0.0) {
  return {std::polar(std::sqrt(e_x_kbt), -phase_x),
          std::polar(std::sqrt(e_y_kbt), -phase_y), t};
}

}  // namespace levctl::envelope
