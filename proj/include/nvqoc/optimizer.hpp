#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "nvqoc/pulse_basis.hpp"
#include "nvqoc/spin_dynamics.hpp"

namespace nvqoc {

struct ParameterSpec {
  std::string name;
  double lo = 0.0;
  double hi = 1.0;
};

// Bound on one parameter that depends on the other coordinates, e.g. a window
// confined to a fraction of another duration. `bounds` must be pure and is
// evaluated after the static bounds have been applied to the point.
struct CoupledBound {
  std::size_t parameter = 0;
  std::function<std::pair<double, double>(const std::vector<double>&)> bounds;
};

struct SearchSpace {
  std::vector<ParameterSpec> parameters;
  std::vector<CoupledBound> coupled;

  std::size_t dimension() const { return parameters.size(); }

  // Throws std::invalid_argument on empty space, lo >= hi, or a coupled
  // bound referencing a parameter out of range.
  void validate() const;

  // Clamp to the static boxes, then clamp each coupled parameter into the
  // intersection of its static box and its coupled interval. Throws
  // std::runtime_error if that intersection is empty.
  std::vector<double> project(std::vector<double> point) const;

  // True when project() moves no coordinate by more than tol * range.
  bool contains(const std::vector<double>& point, double tol = 1e-9) const;
};

// One objective measurement. `fom` is the raw value returned by the
// objective; `best_fom` is the running minimum of raw measurements, so it is
// non-increasing along the history by construction.
struct EvaluationRecord {
  int evaluation = 0;      // 1-based, cumulative across superiterations
  int superiteration = 0;  // 0 for a plain simplex run
  std::vector<double> point;
  double fom = 0.0;
  double best_fom = 0.0;
};

using FomFunction = std::function<double(const std::vector<double>&)>;
using EvaluationCallback = std::function<void(const EvaluationRecord&)>;

struct NelderMeadConfig {
  int max_evaluations = 400;
  // Stop when max - min objective estimate across the simplex drops below
  // this spread.
  double tol_f = 1e-3;
  // Initial simplex edge as a fraction of each parameter's bound range.
  double initial_step_fraction = 0.1;
  double alpha = 1.0;  // reflection
  double gamma = 2.0;  // expansion
  double rho = 0.5;    // contraction
  double sigma = 0.5;  // shrink
  // Re-measure the incumbent best vertex every this many evaluations and
  // average the measurements (noise mitigation). 0 picks 2*(dim+1);
  // negative disables.
  int reevaluate_every = 0;
  // Extra attempts per failing objective call before aborting the run.
  int max_retries = 2;
};

// `best_fom` is the averaged estimate at `best_point` (mean of
// `best_sample_count` measurements); for a noiseless objective it equals the
// running minimum carried in the history records.
struct OptimizerState {
  std::vector<double> best_point;
  double best_fom = std::numeric_limits<double>::infinity();
  int best_sample_count = 0;
  int evaluations = 0;
  int superiteration = 0;  // last superiteration index reached (0 = none)
  bool converged = false;
  bool aborted = false;
  std::string abort_reason;
  std::vector<EvaluationRecord> history;
  // Best objective estimate at the end of each superiteration, in order.
  std::vector<double> superiteration_best;
};

// Bounded Nelder-Mead minimization with (alpha, gamma, rho, sigma) moves and
// boundary projection: out-of-bounds proposals are projected onto the
// feasible set, so every evaluated point satisfies the space's constraints.
// Deterministic: the only randomness is whatever fom_fn carries internally.
// Throws std::invalid_argument if the initial guess violates the bounds.
// If fom_fn keeps failing after the configured retries, the returned state
// has `aborted` set and preserves the history up to the failure.
OptimizerState nelder_mead(const SearchSpace& space,
                           const std::vector<double>& initial_guess,
                           const FomFunction& fom_fn,
                           const NelderMeadConfig& config = {},
                           const EvaluationCallback& on_eval = {});

struct DcrabConfig {
  // Basis superparameters drawn per channel per superiteration.
  int n_set = 4;
  int max_superiterations = 10;
  BasisKind basis_kind = BasisKind::Fourier;
  // Full basis control; pulse_duration must match the guess when set.
  std::optional<BasisConfig> basis_override;
  RestrictionPolicy restriction;  // amplitude_limit must be > 0
  NelderMeadConfig simplex;
  // Coefficient box half-width |A_n| <= limit; 0 uses
  // restriction.amplitude_limit (larger excursions are redundant under the
  // restriction anyway).
  double coefficient_limit = 0.0;
  // Stop once a superiteration improves the best objective by less than
  // this.
  double tol_super = 1e-3;
  std::uint64_t seed = 0;
  // First superiteration index (1-based). Basis draws are salted with the
  // absolute index, so a run checkpointed after superiteration s resumes
  // bit-identically by restarting here with the carried raw waveform.
  int first_superiteration = 1;
};

struct DcrabResult {
  OptimizerState state;
  // Carried expansion waveform (before restriction) and the restricted
  // pulse actually evaluated; the restricted one is what the objective saw.
  ControlPulse best_raw;
  ControlPulse best_pulse;
  // Winning coefficients within the final superiteration's basis.
  std::vector<double> best_coefficients;
};

// Superiteration driver: per superiteration draw a fresh random basis for
// each channel (seeded from `seed` and the absolute superiteration index),
// minimize the objective over the expansion coefficients with nelder_mead
// starting from all-zero coefficients, and carry the best raw waveform over
// as the next guess. The restriction is applied inside each evaluation, so
// the zero-coefficient start of superiteration s+1 reproduces the best
// objective of superiteration s exactly for a noiseless objective. The whole
// trajectory is reproducible bit-for-bit from the config.
// Throws std::invalid_argument on an empty/non-finite guess or a
// non-positive amplitude limit.
DcrabResult dcrab_optimize(const ControlPulse& initial_guess,
                           const std::function<double(const ControlPulse&)>& fom_fn,
                           const DcrabConfig& config,
                           const EvaluationCallback& on_eval = {});

} // namespace nvqoc
