#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include <Eigen/Dense>

namespace nvqoc {

// Level ordering used throughout: ground m_s=0, ground m_s=+-1, excited
// m_s=0, excited m_s=+-1, metastable singlet.
enum Level : int { kG0 = 0, kG1 = 1, kE0 = 2, kE1 = 3, kMeta = 4 };

using Populations = Eigen::Matrix<double, 5, 1>;

// Rate-model parameters. All rates in 1/s, powers in mW. The optical pump
// saturates as pump_max * P / (P + saturation_power).
struct NvRates {
  double radiative = 1.0 / 12e-9;       // spin-conserving e -> g
  double isc_e1 = 1.0 / 24e-9;          // e(+-1) -> metastable
  double isc_e0 = 1.0 / 300e-9;         // e(0) -> metastable (weak)
  double metastable_decay = 1.0 / 300e-9; // total metastable exit rate
  double metastable_g0_fraction = 2.0 / 3.0; // branching toward ground m_s=0
  double pump_max = 1.0 / 40e-9;        // saturated optical pump rate
  double saturation_power = 10.0;       // mW
  double collection_efficiency = 0.03;  // detected fraction of radiative decays
  double background_rate = 3.0e4;       // detected counts/s, laser on

  double pump_rate(double laser_power_mw) const {
    return laser_power_mw <= 0.0
               ? 0.0
               : pump_max * laser_power_mw / (laser_power_mw + saturation_power);
  }
};

// Generator of the linear rate equations dp/dt = A p (columns sum to zero).
Eigen::Matrix<double, 5, 5> rate_matrix(const NvRates& rates, bool laser_on,
                                        double laser_power_mw);

struct EvolutionResult {
  Populations populations;
  double expected_photons = 0.0; // detected radiative photons, background excluded
};

// Propagate populations for `duration` seconds with the laser on or off,
// accumulating the expected detected photon number (collection efficiency
// times the integrated radiative flux). Throws on negative duration or an
// invalid population vector.
EvolutionResult evolve_populations(const NvRates& rates, bool laser_on,
                                   double laser_power_mw,
                                   const Populations& initial, double duration);

// Free parameters of the optical readout sequence.
struct ReadoutParams {
  double laser_power = 10.0;      // mW
  double laser_duration = 1e-6;   // s, full laser pulse length
  double readout_window = 450e-9; // s, counting window at the pulse head
  double wait_duration = 300e-9;  // s, laser-off gap between pulses
};

// Expected detected counts per shot in the four counting windows of one
// interleaved cycle: readout/saturation windows of the first (reference)
// branch and of the second (signal) branch. Background included.
struct WindowMeans {
  double readout_first = 0.0;
  double saturation_first = 0.0;
  double readout_second = 0.0;
  double saturation_second = 0.0;
};

// Precomputed segment propagators for one readout parameter set. Solves the
// steady state of the alternating cycle
//   [spin map t_first] -> laser(L_d) -> wait ->
//   [spin map t_second] -> laser(L_d) -> wait -> repeat,
// where each spin map moves population between the ground spin states with
// the given transfer probability, and returns the four window means in that
// cyclic steady state. Building the kernel once amortizes the matrix
// exponentials across many (t_first, t_second) queries.
class ReadoutKernel {
 public:
  // Throws if readout_window exceeds laser_duration or any piece is negative.
  ReadoutKernel(const NvRates& rates, const ReadoutParams& params);

  WindowMeans means(double transfer_first, double transfer_second) const;

  // Window means when each spin map acts once on the fully initialized state
  // (the steady state of the drive-free laser/wait cycle), as in protocols
  // where every data point is preceded by a fresh initialization. Both window
  // pairs are exactly affine in their transfer probability.
  WindowMeans prepared_means(double transfer_first,
                             double transfer_second) const;

  // The drive-free steady state used by prepared_means.
  const Populations& initialized_state() const { return initialized_; }

 private:
  Eigen::Matrix<double, 6, 6> head_;
  Eigen::Matrix<double, 6, 6> tail_;
  Eigen::Matrix<double, 6, 6> gap_;
  Populations initialized_ = Populations::Zero();
  double background_readout_ = 0.0;
  double background_saturation_ = 0.0;
};

// One-shot convenience wrapper around ReadoutKernel.
WindowMeans expected_window_means(const NvRates& rates,
                                  const ReadoutParams& params,
                                  double transfer_first,
                                  double transfer_second);

// Per-repetition photon counts from the interleaved readout sequence.
// Repetition r aggregates shots_per_repetition executions of the cycle.
struct ReadoutCounts {
  std::vector<std::uint32_t> readout_first;
  std::vector<std::uint32_t> saturation_first;
  std::vector<std::uint32_t> readout_second;
  std::vector<std::uint32_t> saturation_second;

  std::size_t repetitions() const { return readout_first.size(); }
  double total_readout_first() const;
  double total_readout_second() const;
  double total_saturation_first() const;
  double total_saturation_second() const;
};

struct ReadoutSettings {
  std::uint32_t repetitions = 100;
  std::uint32_t shots_per_repetition = 200;
  double inversion_transfer = 1.0; // spin-flip probability of the MW pulse
};

// Draw Poisson counts for every repetition from per-shot window means.
ReadoutCounts draw_counts(const WindowMeans& means,
                          const ReadoutSettings& settings,
                          std::mt19937_64& rng);

// Full simulated readout: reference branch unflipped, signal branch flipped
// with settings.inversion_transfer.
ReadoutCounts simulate_readout(const NvRates& rates,
                               const ReadoutParams& params,
                               const ReadoutSettings& settings,
                               std::mt19937_64& rng);

// Readout-window contrast (R_first - R_second) / (R_first + R_second) from
// count totals. Throws if the combined total is zero.
double contrast(const ReadoutCounts& counts);
double contrast_from_means(const WindowMeans& means);

struct ReadoutNoise {
  double sigma_r = 0.0;           // spin-projection-noise multiple
  double fidelity = 0.0;          // 1 / sigma_r
  double fidelity_equivalent = 0.0; // 1/sqrt(1 + 1/(contrast^2 mean))
  bool divergent = false;         // equal totals: sigma_r is infinite
};

// Photon-shot-noise figure from readout-window totals.
ReadoutNoise readout_noise(double total_first, double total_second);
ReadoutNoise readout_noise(const ReadoutCounts& counts);

// Readout figure of merit: 1 - contrast * (1 - Var[d]) with d the
// per-repetition |S_first - S_second| normalized by the mean of
// (S_first + S_second); low values mean high contrast and uniform
// saturation. Throws with fewer than two repetitions or all-zero
// saturation counts.
double fom_readout(const ReadoutCounts& counts);

// Noiseless limit of the figure of merit (uniformity penalty = 0).
double fom_readout_from_means(const WindowMeans& means);

} // namespace nvqoc
