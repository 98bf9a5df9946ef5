#pragma once

#include <cmath>

namespace nvqoc {

inline constexpr double kPi = 3.14159265358979323846;
inline constexpr double kTwoPi = 2.0 * kPi;
inline constexpr double kSqrt2 = 1.41421356237309504880;

// Physical constants (SI).
inline constexpr double kHbar = 1.054571817e-34;        // J s
inline constexpr double kBohrMagneton = 9.2740100783e-24; // J/T
inline constexpr double kLandeFactor = 2.00231930436256;

// NV electron gyromagnetic ratio, rad/(s T).
inline constexpr double kGammaNv = kLandeFactor * kBohrMagneton / kHbar;

// All internal frequencies are angular (rad/s); configuration and CLI
// surfaces use Hz (or MHz) and convert here.
inline constexpr double angular_from_hz(double hz) { return kTwoPi * hz; }
inline constexpr double hz_from_angular(double w) { return w / kTwoPi; }

inline constexpr double seconds_from_ns(double ns) { return ns * 1e-9; }
inline constexpr double ns_from_seconds(double s) { return s * 1e9; }

} // namespace nvqoc
