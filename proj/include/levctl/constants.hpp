#pragma once

namespace levctl::constants {

inline constexpr double pi = 3.14159265358979323846;
inline constexpr double two_pi = 2.0 * pi;

/// Boltzmann constant [J/K] (exact, SI 2019).
inline constexpr double k_boltzmann = 1.380649e-23;

/// Reduced Planck constant [J s].
inline constexpr double hbar = 1.054571817e-34;

}  // namespace levctl::constants
