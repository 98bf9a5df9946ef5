#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "nvqoc/photophysics.hpp"
#include "nvqoc/spin_dynamics.hpp"

namespace nvqoc {

// Wire protocol between the optimizer client and the measurement server: one
// structured record per line (JSON text), versioned. Every field that could
// be mis-specified remotely is validated on parse; violations surface as
// ProtocolError carrying the offending field path so the server can answer
// with a structured error instead of dropping the connection.
inline constexpr int kProtocolVersion = 1;

struct ProtocolError : std::runtime_error {
  std::string field; // dotted path, e.g. "payload.laser_power_mw"

  ProtocolError(std::string field_path, const std::string& message)
      : std::runtime_error(message), field(std::move(field_path)) {}
};

enum class EvalKind {
  ReadoutParams, // readout-parameter figure of merit (no microwave pulse)
  PodmrFom,      // amplitude-scanned inversion figure of merit
  RamseyGateFom, // amplitude-scanned pi/2-gate figure of merit
  Spectrum,      // normalized counts versus carrier detuning per scale
  Fringe,        // normalized counts versus free-evolution delay
};

std::string to_string(EvalKind kind);
EvalKind eval_kind_from_string(const std::string& name); // throws ProtocolError

// Two-channel envelope as transmitted: sample step in ns, amplitudes as
// fractions of the server's full drive amplitude.
struct PulsePayload {
  double dt_ns = 0.0;
  std::vector<double> i; // in-phase fractions
  std::vector<double> q; // quadrature fractions
};

// Shot budget of one evaluation.
struct ShotBudget {
  std::uint32_t repetitions = 100;
  std::uint32_t shots_per_repetition = 200;

  std::uint64_t total() const {
    return static_cast<std::uint64_t>(repetitions) * shots_per_repetition;
  }
};

struct EvalRequest {
  std::uint64_t id = 0; // unique per session, drives the derived seed
  EvalKind kind = EvalKind::ReadoutParams;
  std::optional<ShotBudget> shots; // server defaults when absent
  bool return_raw = true;

  // kind == ReadoutParams
  double laser_power_mw = 0.0;
  double laser_duration_ns = 0.0;
  double readout_window_ns = 0.0;
  double wait_duration_ns = 0.0;

  // pulse-driven kinds
  PulsePayload pulse;
  std::vector<double> scales;        // PodmrFom / RamseyGateFom / Spectrum
  double carrier_detuning_mhz = 0.0; // PodmrFom / RamseyGateFom / Fringe
  std::vector<double> detunings_mhz; // Spectrum
  std::vector<double> delays_ns;     // Fringe
  double amplitude_scale = 1.0;      // Fringe
};

// Raw measurement payloads a response may carry alongside the scalar FoM.
struct RawCounts {
  // ReadoutParams: per-window totals over the whole budget
  double readout_first = 0.0;
  double readout_second = 0.0;
  double saturation_first = 0.0;
  double saturation_second = 0.0;

  // PodmrFom / RamseyGateFom: per-scale totals and contrasts
  std::vector<double> scales;
  std::vector<double> counts_first;
  std::vector<double> counts_second;
  std::vector<double> contrast;

  // Spectrum: normalized counts per scale row, plus the per-shot reference
  // count level for absolute-rate conversions
  std::vector<double> detunings_mhz;
  std::vector<std::vector<double>> normalized_rows;
  double mean_reference_counts = 0.0;

  // Fringe: normalized counts per delay
  std::vector<double> delays_ns;
  std::vector<double> normalized;
};

struct EvalResponse {
  std::uint64_t id = 0;
  double fom = 0.0;
  double std_error = 0.0;
  double seconds = 0.0; // server-side evaluation time
  std::optional<RawCounts> raw;
};

struct ErrorResponse {
  std::uint64_t id = 0; // 0 when the request id could not be parsed
  std::string field;    // offending field path, empty when not field-specific
  std::string message;
};

// One-line JSON encodings (no embedded newlines). parse_* throws
// ProtocolError on malformed input; parse_message classifies a line first.
std::string encode(const EvalRequest& request);
std::string encode(const EvalResponse& response);
std::string encode(const ErrorResponse& error);

EvalRequest parse_request(const std::string& line);
EvalResponse parse_response(const std::string& line);
ErrorResponse parse_error(const std::string& line);

enum class MessageType { Request, Response, Error };
MessageType message_type(const std::string& line); // throws ProtocolError

// Conversions between the wire pulse (ns / fractions) and the simulation
// pulse (s / rad/s) relative to a full drive amplitude.
PulsePayload to_payload(const ControlPulse& pulse, double rabi_max);
ControlPulse to_pulse(const PulsePayload& payload, double rabi_max);

} // namespace nvqoc
