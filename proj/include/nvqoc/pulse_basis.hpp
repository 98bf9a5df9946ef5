#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "nvqoc/spin_dynamics.hpp"

namespace nvqoc {

enum class BasisKind { Fourier, Sigmoid };

// One randomized basis element. For Fourier, omega is an angular frequency
// (rad/s) and sub_index selects sin (1) or cos (2). For Sigmoid, omega is the
// rise-center offset in seconds, sigma the rise width, sub_index always 1.
struct BasisElement {
  BasisKind kind = BasisKind::Fourier;
  double omega = 0.0;
  int sub_index = 1;
  double sigma = 0.0;
};

// Superparameter bounds and shape defaults for one pulse duration.
struct BasisConfig {
  BasisKind kind = BasisKind::Fourier;
  double pulse_duration = 0.0; // t_p, s
  double fourier_omega_min = 0.0;
  double fourier_omega_max = 0.0; // rad/s
  double sigmoid_sigma = 0.0;     // s
  double sigmoid_epsilon = 4.0;   // offset factor; erf(-4/sqrt(2)) < 4e-5

  // omega_max = 2*pi*10/t_p: ~10 oscillations across the pulse.
  static BasisConfig fourier(double pulse_duration);
  // sigma = t_p/20 rise width.
  static BasisConfig sigmoid(double pulse_duration);
};

// f(element; t). Sigmoid uses the closed erf form of the Gaussian integral.
double evaluate_element(const BasisElement& e, double t);

// N_set superparameters drawn i.i.d. uniform from the config bounds,
// deterministic under the seed. Fourier yields two elements (sin, cos) per
// superparameter; Sigmoid yields one per superparameter and always prepends
// the anchored element at omega = epsilon*sigma. Throws on an empty bound
// interval.
std::vector<BasisElement> sample_basis(const BasisConfig& config, int n_set,
                                       std::uint64_t seed);

// Basis expansion around an initial guess. Each channel carries its own
// element list; the coefficient vector is the concatenation channel 0 then
// channel 1. Evaluation with all-zero coefficients reproduces the guess
// exactly.
struct PulseExpansion {
  ControlPulse initial_guess;
  std::array<std::vector<BasisElement>, 2> elements;

  std::size_t coefficient_count() const {
    return elements[0].size() + elements[1].size();
  }
};

// u^i(t) = u0^i(t) + sum_n A_n f(elem_n; t) on the guess's midpoint time
// grid t_k = (k + 1/2) dt. For a Sigmoid channel a closing element at
// omega = t_p - epsilon*sigma enters with weight -sum(A_n) so the summed
// contribution returns to zero at t_p. Output is the raw (unrestricted)
// waveform. Throws if the coefficient count does not match.
ControlPulse evaluate_expansion(const PulseExpansion& expansion,
                                const std::vector<double>& coefficients,
                                const BasisConfig& config);

enum class RestrictionMode { CutOff, BandwidthLimited };

struct RestrictionPolicy {
  RestrictionMode mode = RestrictionMode::CutOff;
  double amplitude_limit = 0.0;        // A_max, rad/s, per channel
  double window_edge_fraction = 0.1;   // flat-top: unity over central 80%
  double window_sigma_fraction = 0.05; // gaussian shoulder sigma / t_p
};

// CutOff: clamp each channel to [-A_max, A_max].
// BandwidthLimited: per channel, identity if already within limits, else
// affine map of [min, max] onto [-A_max, A_max]; then multiply by a flat-top
// Gaussian window that is exactly zero at the first and last sample.
// Either way the I/Q magnitude is capped radially at A_max afterwards, so
// sqrt(u1^2+u2^2) <= A_max holds samplewise.
ControlPulse apply_restriction(const RestrictionPolicy& policy,
                               const ControlPulse& raw);

// Flat-top Gaussian window on [0, t_p], exactly 0 at both ends, 1 over the
// central region. Exposed for tests.
double flat_top_window(double t, double t_p, double edge_fraction,
                       double sigma_fraction);

} // namespace nvqoc
