#pragma once

#include <cmath>

#include "levctl/constants.hpp"
#include "levctl/errors.hpp"

// Physical parameter set and unit conventions.
//
// Convention used throughout the library: every internal frequency-like
// quantity is angular (rad/s). User-facing configuration and reports use
// ordinary frequency (Hz); the conversion happens exactly once, in config
// validation and report writers.

namespace levctl::model {

inline double hz_to_angular(double f_hz) { return constants::two_pi * f_hz; }
inline double angular_to_hz(double omega) { return omega / constants::two_pi; }

/// Sphere mass from diameter [m] and mass density [kg/m^3].
inline double mass_from_geometry(double diameter, double density) {
  if (!(diameter > 0.0)) throw ConfigError("particle.diameter_nm: must be > 0");
  if (!(density > 0.0)) throw ConfigError("particle.density_kgm3: must be > 0");
  return density * (constants::pi / 6.0) * diameter * diameter * diameter;
}

/// Temperature scale of a single motional quantum, hbar*omega/k_B [K].
inline double ground_state_temperature(double omega) {
  if (!(omega > 0.0)) throw ConfigError("ground_state_temperature: omega must be > 0");
  return constants::hbar * omega / constants::k_boltzmann;
}

struct ParticleParams {
  double diameter = 136e-9;  // m
  double density = 2200.0;   // kg/m^3 (fused silica)

  double mass() const { return mass_from_geometry(diameter, density); }
};

struct TrapParams {
  double omega_x = hz_to_angular(115e3);  // rad/s
  double omega_y = hz_to_angular(141e3);  // rad/s

  /// Mode splitting, omega_y - omega_x [rad/s].
  double delta_omega() const { return omega_y - omega_x; }
};

struct BathParams {
  double temperature = 300.0;  // K
  double gamma = 0.0;          // rad/s, momentum damping rate (energy decays at gamma)
};

struct NoiseModel {
  double s_x_noise = 0.0;    // m^2/Hz, one-sided flat position-detection PSD
  double sample_rate = 2e6;  // Hz
};

struct DriveParams {
  double phi0 = 0.0;       // rad, polarization-rotation amplitude
  double omega_mod = 0.0;  // rad/s
  double psi = 0.0;        // rad, modulation phase offset
  bool enabled = false;
};

/// Mode-coupling rate A = phi0 * (omega_y - omega_x) [rad/s].
inline double coupling_rate(double phi0, const TrapParams& trap) {
  return phi0 * trap.delta_omega();
}

}  // namespace levctl::model
