#pragma once

#include <numbers>

namespace cavsim {

// 2019 SI exact values / CODATA.
inline constexpr double hbar = 1.054571817e-34;           // J s
inline constexpr double k_boltzmann = 1.380649e-23;       // J / K
inline constexpr double planck_h = 6.62607015e-34;        // J s
inline constexpr double atomic_mass_unit = 1.66053906660e-27;  // kg

inline constexpr double pi = std::numbers::pi;
inline constexpr double two_pi = 2.0 * std::numbers::pi;

// 87Rb, the species used in the bundled presets (D2 line at 780 nm).
inline constexpr double rb87_mass = 86.909180531 * atomic_mass_unit;  // kg
inline constexpr double rb87_linewidth = two_pi * 6.1e6;              // rad/s
inline constexpr double rb87_wavelength = 780e-9;                     // m
inline constexpr double rb87_wavenumber = two_pi / rb87_wavelength;   // rad/m

}  // namespace cavsim
