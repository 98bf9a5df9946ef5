#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include "nvqoc/nv_model.hpp"
#include "nvqoc/photophysics.hpp"
#include "nvqoc/spin_dynamics.hpp"

namespace nvqoc {

// Drive-amplitude scale factors probed by the robustness protocols. Scales
// must be strictly ascending and lie in (0, 1].
struct AmplitudeScan {
  std::vector<double> scales;

  // {1/n, 2/n, ..., 1}
  static AmplitudeScan uniform(int n = 5);

  void validate() const; // throws std::invalid_argument
};

// How the quasi-static detuning distribution enters a measurement:
//   Expectation   - transfer probabilities are averaged analytically over the
//                   hyperfine lines and the detuning distribution (quadrature)
//   PerRepetition - one hyperfine line and one detuning value are drawn per
//                   repetition block; requires noiseless == false
enum class DephasingSampling { Expectation, PerRepetition };

// Everything a measurement protocol needs besides the pulse under test.
// carrier_detuning is the microwave carrier frequency minus the model
// resonance (rad/s); the hyperfine offsets and dephasing draws add to it.
struct SequenceContext {
  NvModel nv;
  ReadoutParams readout;
  ReadoutSettings shots;
  double carrier_detuning = 0.0;
  int quadrature_nodes = 21;
  bool noiseless = false;
  DephasingSampling sampling = DephasingSampling::Expectation;
};

// Per-scale counts and contrasts of an alternating two-branch measurement.
// counts_first/counts_second are total readout-window photon counts of the
// reference and signal branches (expected values in noiseless mode), so both
// contrast and fom can be recomputed from the counts alone. fom_std_error is
// the shot-noise standard error of fom propagated from Poisson counting
// statistics; it is reported in noiseless mode too, as the noise floor the
// configuration would have.
struct SequenceResult {
  std::vector<double> scales;
  std::vector<double> counts_first;
  std::vector<double> counts_second;
  std::vector<double> contrast;
  double fom = 0.0;
  double fom_std_error = 0.0;
};

// Draws one total detuning offset (hyperfine line + quasi-static broadening)
// per call. The broadening distribution follows HyperfineModel::decay_order.
class DetuningSampler {
 public:
  explicit DetuningSampler(const HyperfineModel& hyperfine);
  double operator()(std::mt19937_64& rng);

 private:
  std::vector<double> offsets_;
  std::discrete_distribution<int> line_;
  double sigma_ = 0.0;
  double decay_order_ = 2.0;
};

// Expectation of transfer_at(line_offset + delta) over hyperfine lines and
// the quasi-static detuning delta (Gauss-Hermite quadrature for Gaussian
// broadening, transformed Gauss-Legendre for Lorentzian).
double averaged_transfer(const HyperfineModel& hyperfine, int quadrature_nodes,
                         const std::function<double(double)>& transfer_at);

// Every measurement point below reads out a prepared-spin mixture from the
// freshly initialized state, alternating a no-drive reference branch with the
// driven branch. Noisy draws use an RNG derived from (seed, point identity),
// so results are independent of evaluation order and sub-grid selection.

// Pulsed-ODMR robustness figure: for each scale the driven branch plays the
// scaled pulse at the carrier. FoM = 1 - mean_k contrast_k; the minimum
// rewards pulses whose inversion survives amplitude miscalibration.
SequenceResult podmr_fom(const ControlPulse& pulse, const AmplitudeScan& scan,
                         const SequenceContext& ctx, std::uint64_t seed);

// Gate-level verification of a pi/2 pulse U: branch A plays U, then a
// full-amplitude rectangular pi_x reference, then U again (back to |0> when U
// is ideal); branch B plays U twice (full inversion when U is ideal). Both
// branches scale U by each scan value while the reference stays at full
// amplitude. FoM = 1 - mean_k (P0_k - P1_k)/(P0_k + P1_k).
SequenceResult gate_verification_fom(const ControlPulse& pulse,
                                     const AmplitudeScan& scan,
                                     const ControlPulse& pi_reference,
                                     const SequenceContext& ctx,
                                     std::uint64_t seed);

// Readout photon counts versus carrier detuning, normalized per point by the
// interleaved no-drive reference branch, one row per amplitude scale.
struct SpectrumResult {
  std::vector<double> detunings; // rad/s, relative to the model resonance
  std::vector<double> scales;
  std::vector<std::vector<double>> normalized; // [scale][detuning]
};

SpectrumResult podmr_spectrum(const ControlPulse& pulse,
                              const AmplitudeScan& scan,
                              const std::vector<double>& detunings,
                              const SequenceContext& ctx, std::uint64_t seed);

// Ramsey interferogram: half_pulse, free evolution for each delay, half_pulse
// again, read out, normalized by the interleaved no-drive (m_s = 0) branch.
// amplitude_scale plays both half pulses miscalibrated by that factor.
struct RamseyResult {
  std::vector<double> delays;           // s
  std::vector<double> normalized;       // counts_signal / counts_baseline
  std::vector<double> counts_signal;    // total readout counts, driven branch
  std::vector<double> counts_baseline;  // total readout counts, reference
};

RamseyResult ramsey_fringe(const ControlPulse& half_pulse,
                           const std::vector<double>& delays,
                           const SequenceContext& ctx, std::uint64_t seed,
                           double amplitude_scale = 1.0);

} // namespace nvqoc
