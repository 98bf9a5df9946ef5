#pragma once

#include <cstdint>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include "nvqoc/protocol.hpp"
#include "nvqoc/spin_dynamics.hpp"

namespace nvqoc {

// Malformed log, manifest, or pulse file content.
struct LogError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Current UTC time as "YYYY-MM-DDTHH:MM:SSZ".
std::string utc_timestamp_now();

// Append-only newline-delimited writer. Every append is flushed to the OS
// before returning, so a crashed client leaves at most one partial trailing
// line behind.
class JsonlWriter {
 public:
  explicit JsonlWriter(const std::string& path);
  void append(const std::string& line);
  const std::string& path() const { return path_; }

 private:
  std::string path_;
  std::ofstream out_;
};

// All complete (newline-terminated) lines of a file, blank lines skipped. A
// trailing fragment without its newline — the signature of an interrupted
// write — is ignored rather than treated as corruption.
std::vector<std::string> read_complete_lines(const std::string& path);

// Run header record: everything needed to interpret the evaluation records
// that follow it, so the log is self-contained.
struct LogMeta {
  std::string run_kind;
  std::uint64_t master_seed = 0;
  std::string config_json;    // resolved simulator configuration
  std::string optimizer_json; // run-specific settings, self-describing
  std::string timestamp;
};

// One evaluation: the exact request line sent and response line received.
struct LogEval {
  std::string request_line;
  std::string response_line;
};

std::string encode_log_meta(const LogMeta& meta);
std::string encode_log_eval(const std::string& request_line,
                            const std::string& response_line);
// "meta", "eval", or "" when the line is not a recognizable record.
std::string log_record_type(const std::string& line);
LogMeta parse_log_meta(const std::string& line);
LogEval parse_log_eval(const std::string& line);

// Snapshot of a run: configuration, provenance, result summary, and an
// optional checkpoint for resuming an interrupted optimization.
struct RunManifest {
  int protocol_version = kProtocolVersion;
  std::string run_kind; // "step1" | "step2-podmr" | "step2-gate"
  std::uint64_t master_seed = 0;
  bool noiseless = false;
  std::string config_json;
  std::string optimizer_json;
  std::string started_utc;
  std::string finished_utc; // empty while the run is checkpointed
  double best_fom = std::numeric_limits<double>::infinity();
  std::uint64_t evaluations = 0;
  std::vector<double> best_parameters; // readout-parameter runs
  std::string pulse_path;              // pulse-optimization runs
  std::string log_path;
  // Checkpoint block; next_superiteration == 0 means none is pending. The
  // waveform is stored in solver units (rad/s, seconds) so a resumed run
  // carries bit-identical samples.
  int next_superiteration = 0;
  double checkpoint_dt = 0.0;       // s
  std::vector<double> checkpoint_i; // rad/s
  std::vector<double> checkpoint_q;
  std::uint64_t next_request_id = 1;

  bool finished() const { return !finished_utc.empty(); }
};

std::string encode_manifest(const RunManifest& manifest);
RunManifest parse_manifest(const std::string& text);
void save_manifest(const RunManifest& manifest, const std::string& path);
RunManifest load_manifest(const std::string& path);

// Plain-text pulse file: '#' headers carry the sample spacing and the drive
// cap at full precision; data rows are "t_ns i_frac q_frac" at nine
// significant digits, amplitudes as fractions of the cap.
void save_pulse_file(const std::string& path, const ControlPulse& pulse,
                     double rabi_max);
// Reconstructs physical amplitudes from the stored cap; the cap itself is
// returned through `rabi_max_out` when non-null.
ControlPulse load_pulse_file(const std::string& path,
                             double* rabi_max_out = nullptr);

} // namespace nvqoc
