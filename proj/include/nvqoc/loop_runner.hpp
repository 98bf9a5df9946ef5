#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "nvqoc/optimizer.hpp"
#include "nvqoc/protocol.hpp"
#include "nvqoc/run_log.hpp"
#include "nvqoc/sim_config.hpp"
#include "nvqoc/transport.hpp"

namespace nvqoc {

// One human-readable progress line per call.
using ProgressFn = std::function<void(const std::string&)>;

// ---------------------------------------------------------------------------
// Readout-parameter optimization (step 1)
// ---------------------------------------------------------------------------

// Fixed search box for the optical readout parameters, in the CLI's natural
// units: laser power (mW), laser duration (ns), readout window (ns), wait
// (ns). The window is additionally coupled to [0.25, 0.75] of the laser
// duration.
SearchSpace step1_search_space();

// Laser power starts at the saturation power (clamped into the box), the
// timing parameters at their conventional operating point.
std::vector<double> step1_default_guess(double saturation_power_mw);

struct Step1Options {
  NelderMeadConfig simplex;
  std::vector<double> initial_guess; // empty = step1_default_guess
  std::optional<ShotBudget> shots;   // server defaults when absent
  std::uint64_t master_seed = 1;     // recorded in log/manifest
  std::uint64_t first_request_id = 1;
};

std::string encode_step1_options(const Step1Options& options);
Step1Options parse_step1_options(const std::string& optimizer_json);

struct Step1Result {
  OptimizerState state;
  RunManifest manifest;
};

// Minimizes the readout figure of merit over the step-1 box through the
// transport, appending one self-contained record per evaluation to the log.
// An aborted run (objective kept failing) leaves an unfinished manifest that
// a later session can resume from; a completed run marks it finished.
Step1Result run_step1(RequestTransport& transport,
                      const SimulatorConfig& config,
                      const Step1Options& options,
                      const std::string& log_path,
                      const std::string& manifest_path,
                      const ProgressFn& progress = {});

// ---------------------------------------------------------------------------
// Robust-pulse optimization (step 2)
// ---------------------------------------------------------------------------

enum class Step2Kind {
  Podmr, // amplitude-robust inversion pulse (area pi)
  Gate,  // amplitude-robust pi/2 gate, verified against a square pi reference
};

std::string to_string(Step2Kind kind);
Step2Kind step2_kind_from_string(const std::string& name);

struct Step2Options {
  Step2Kind kind = Step2Kind::Podmr;
  // restriction.amplitude_limit == 0 picks the model's full drive amplitude.
  DcrabConfig dcrab;
  std::vector<double> scales; // empty = {0.2, 0.4, 0.6, 0.8, 1.0}
  // Initial guess: square pulse of the target area stretched by this factor
  // (amplitude reduced accordingly), leaving headroom for shaping.
  double duration_factor = 3.0;
  int samples = 120; // waveform samples across the pulse
  std::optional<ShotBudget> shots;
  std::uint64_t master_seed = 1;
  std::uint64_t first_request_id = 1;
  // Checkpoint continuation; not serialized (a replay always runs from
  // scratch, which reproduces a resumed run bit-identically).
  int resume_superiteration = 0; // >0: skip straight to this superiteration
  std::optional<ControlPulse> resume_raw; // carried raw waveform
  double resume_best_fom = std::numeric_limits<double>::infinity();
};

std::string encode_step2_options(const Step2Options& options);
Step2Options parse_step2_options(const std::string& optimizer_json);

// Square pulse of the kind's target area, stretched per the options.
ControlPulse step2_initial_pulse(const Step2Options& options,
                                 const NvModel& model);

struct Step2Result {
  // Aggregated over all superiterations of this call; history evaluation
  // numbers are cumulative.
  OptimizerState state;
  ControlPulse best_raw;   // carried expansion waveform (pre-restriction)
  ControlPulse best_pulse; // restricted waveform the objective saw
  std::vector<double> best_coefficients;
  RunManifest manifest;
};

// Randomized-basis pulse optimization through the transport. After every
// superiteration the manifest checkpoint (carried waveform + next
// superiteration + next request id) and the best pulse file are rewritten, so
// an interrupted run loses at most the superiteration in flight.
Step2Result run_step2(RequestTransport& transport,
                      const SimulatorConfig& config,
                      const Step2Options& options,
                      const std::string& log_path,
                      const std::string& manifest_path,
                      const std::string& pulse_path,
                      const ProgressFn& progress = {});

// ---------------------------------------------------------------------------
// Sensitivity scans and report
// ---------------------------------------------------------------------------

struct ScanOptions {
  std::optional<ShotBudget> shots;
  std::uint64_t master_seed = 1;
  std::uint64_t first_request_id = 1;
};

// One spectrum per drive scale, raw rows logged for the report stage.
void run_amplitude_scan(RequestTransport& transport,
                        const SimulatorConfig& config,
                        const ControlPulse& pulse,
                        const std::vector<double>& scales,
                        const std::vector<double>& detunings_mhz,
                        const ScanOptions& options,
                        const std::string& log_path,
                        const ProgressFn& progress = {});

// One fringe per carrier detuning, raw traces logged for the report stage.
void run_detuning_scan(RequestTransport& transport,
                       const SimulatorConfig& config,
                       const ControlPulse& half_pulse,
                       const std::vector<double>& carrier_detunings_mhz,
                       const std::vector<double>& delays_ns,
                       double amplitude_scale,
                       const ScanOptions& options,
                       const std::string& log_path,
                       const ProgressFn& progress = {});

struct SensitivityRow {
  double x = 0.0;        // drive scale or carrier detuning (MHz)
  double contrast = 0.0; // fitted relative contrast
  double second = 0.0;   // fitted FWHM (MHz) or T2* (us)
  double eta = 0.0;      // field sensitivity, T per sqrt(Hz)
  bool converged = false;
  std::string note; // empty when the row is usable
};

struct SensitivityReport {
  std::string kind; // "amplitude-scan" | "detuning-scan"
  std::vector<SensitivityRow> rows;
};

// Re-fits every logged scan record; the log alone carries everything needed
// (configuration from the header record, data from the raw payloads).
SensitivityReport build_sensitivity_report(const std::string& log_path);

// Plain-text table, one row per scan point.
std::string format_sensitivity_report(const SensitivityReport& report);
void write_sensitivity_report(const SensitivityReport& report,
                              const std::string& path);

// ---------------------------------------------------------------------------
// Replay
// ---------------------------------------------------------------------------

struct ReplayOutcome {
  bool fom_match = false;      // final best objective identical bit for bit
  bool sequence_match = false; // every evaluation identical bit for bit
  std::size_t compared = 0;    // evaluations checked
  double original_fom = std::numeric_limits<double>::quiet_NaN();
  double replayed_fom = std::numeric_limits<double>::quiet_NaN();
  std::string detail; // first mismatch, empty when both checks pass

  // A noiseless run must reproduce its final objective; a noisy run must
  // reproduce the entire evaluation sequence.
  bool ok(bool noiseless) const {
    return noiseless ? fom_match : sequence_match;
  }
};

// Re-runs an optimization from its manifest on a fresh in-process service
// and compares against the original log record by record. scratch_dir
// receives the replay's own log/manifest/pulse artifacts.
ReplayOutcome replay_run(const RunManifest& manifest,
                         const std::string& scratch_dir,
                         const std::string& original_log_path = "");
ReplayOutcome replay_run_from_file(const std::string& manifest_path,
                                   const std::string& scratch_dir);

} // namespace nvqoc
