#pragma once

// Unit conventions.
//
// All internal quantities are strict SI: tesla, rad/s, seconds, 1/s.
// Config files and reports use display units (nT, pT, ms, uHz, kS/s);
// the helpers below are the only place conversions happen.
// Rotation rates are reported Hz-equivalent, i.e. Omega / 2pi.

namespace panco::units {

inline constexpr double pi = 3.14159265358979323846;
inline constexpr double two_pi = 2.0 * pi;

inline constexpr double tesla_per_nT = 1e-9;
inline constexpr double tesla_per_pT = 1e-12;
inline constexpr double tesla_per_uT = 1e-6;
inline constexpr double s_per_ms = 1e-3;
inline constexpr double s_per_us = 1e-6;

inline double from_nT(double v) { return v * tesla_per_nT; }
inline double to_nT(double v) { return v / tesla_per_nT; }
inline double from_pT(double v) { return v * tesla_per_pT; }
inline double to_pT(double v) { return v / tesla_per_pT; }
inline double from_ms(double v) { return v * s_per_ms; }
inline double to_ms(double v) { return v / s_per_ms; }

// Each conversion pair multiplies and divides by the same constant so a
// value that has been through one round trip is a fixed point of further
// round trips (config files reload losslessly).
inline constexpr double rad_s_T_per_MHz = two_pi * 1e6;
inline constexpr double rad_s_per_uHz = two_pi * 1e-6;

// gamma is stored in config as gamma/2pi in MHz/T.
inline double gamma_from_MHz_per_T(double f) { return f * rad_s_T_per_MHz; }
inline double gamma_to_MHz_per_T(double g) { return g / rad_s_T_per_MHz; }

// Rotation rates: config/report values are Hz-equivalent (Omega/2pi).
inline double omega_from_uHz(double f) { return f * rad_s_per_uHz; }
inline double omega_to_uHz(double w) { return w / rad_s_per_uHz; }
inline double omega_from_Hz(double f) { return two_pi * f; }
inline double omega_to_Hz(double w) { return w / two_pi; }

inline double rate_from_kSps(double v) { return v * 1e3; }
inline double rate_to_kSps(double v) { return v * 1e-3; }

// Cross-talk: uHz/pT <-> Hz/T.  1 uHz/pT = 1e6 Hz/T.
inline double crosstalk_from_uHz_per_pT(double v) { return v * 1e6; }
inline double crosstalk_to_uHz_per_pT(double v) { return v * 1e-6; }

}  // namespace panco::units
