#pragma once

#include <vector>

#include "nvqoc/photophysics.hpp"
#include "nvqoc/units.hpp"

namespace nvqoc {

// Inhomogeneous-broadening model for the spin transition: a set of discrete
// hyperfine lines plus a quasi-static detuning drawn fresh for every
// repetition. decay_order selects the draw distribution so the ensemble
// free-induction envelope decays as exp(-(t/T2*)^m):
//   m = 2 -> Gaussian with sigma = sqrt(2)/T2*
//   m = 1 -> Lorentzian with gamma = 1/T2*
struct HyperfineModel {
  std::vector<double> offsets; // rad/s, relative to the bare resonance
  std::vector<double> weights; // nonnegative, summing to 1
  double t2_star = 2.0e-6;     // s
  double decay_order = 2.0;    // m

  // Width parameter of the quasi-static detuning distribution.
  double detuning_sigma() const { return kSqrt2 / t2_star; }

  // Nitrogen-14 triplet: three equally weighted lines split by 2.16 MHz.
  static HyperfineModel nitrogen14(double t2_star = 2.0e-6);

  // Single unbroadened line at zero offset with effectively no dephasing.
  static HyperfineModel single_line();

  void validate() const; // throws std::invalid_argument on bad fields
};

// Ground-truth sample description shared by every measurement protocol.
struct NvModel {
  NvRates rates;
  double resonance = kTwoPi * 2.871e9; // rad/s, zero-field splitting
  double rabi_max = kTwoPi * 25.0e6;   // rad/s at full drive amplitude
  HyperfineModel hyperfine = HyperfineModel::nitrogen14();

  // Duration of a full-amplitude rectangular pi pulse.
  double pi_duration() const { return kPi / rabi_max; }
};

} // namespace nvqoc
