#include "nvqoc/protocol.hpp"

#include <cmath>
#include <limits>

#include <json.hpp>

#include "nvqoc/units.hpp"

namespace nvqoc {

using nlohmann::json;

namespace {

// --- parse helpers: every extraction names the field it validates ---------

[[noreturn]] void fail(const std::string& field, const std::string& message) {
  throw ProtocolError(field, message);
}

const json& member(const json& obj, const std::string& field,
                   const std::string& path) {
  if (!obj.is_object()) fail(path.empty() ? field : path, "must be an object");
  const auto it = obj.find(field);
  if (it == obj.end()) fail(path + field, "missing required field");
  return *it;
}

double number(const json& obj, const std::string& field,
              const std::string& path) {
  const json& v = member(obj, field, path);
  if (!v.is_number()) fail(path + field, "must be a number");
  const double d = v.get<double>();
  if (!std::isfinite(d)) fail(path + field, "must be finite");
  return d;
}

double positive(const json& obj, const std::string& field,
                const std::string& path) {
  const double d = number(obj, field, path);
  if (!(d > 0.0)) fail(path + field, "must be positive");
  return d;
}

double non_negative(const json& obj, const std::string& field,
                    const std::string& path) {
  const double d = number(obj, field, path);
  if (d < 0.0) fail(path + field, "must be non-negative");
  return d;
}

std::uint64_t uint_field(const json& obj, const std::string& field,
                         const std::string& path) {
  const json& v = member(obj, field, path);
  if (!v.is_number_unsigned()) fail(path + field, "must be a non-negative integer");
  return v.get<std::uint64_t>();
}

std::vector<double> finite_array(const json& obj, const std::string& field,
                                 const std::string& path,
                                 std::size_t min_size = 1) {
  const json& v = member(obj, field, path);
  if (!v.is_array()) fail(path + field, "must be an array");
  if (v.size() < min_size) fail(path + field, "too few elements");
  std::vector<double> out;
  out.reserve(v.size());
  for (const auto& e : v) {
    if (!e.is_number() || !std::isfinite(e.get<double>()))
      fail(path + field, "elements must be finite numbers");
    out.push_back(e.get<double>());
  }
  return out;
}

json pulse_to_json(const PulsePayload& pulse) {
  return json{{"dt_ns", pulse.dt_ns}, {"i", pulse.i}, {"q", pulse.q}};
}

PulsePayload pulse_from_json(const json& obj, const std::string& path) {
  PulsePayload out;
  out.dt_ns = positive(obj, "dt_ns", path);
  out.i = finite_array(obj, "i", path);
  out.q = finite_array(obj, "q", path);
  if (out.i.size() != out.q.size())
    fail(path + "q", "must match the length of i");
  return out;
}

void check_scales(const std::vector<double>& scales, const std::string& path) {
  double prev = 0.0;
  for (const double s : scales) {
    if (!(s > prev) || s > 1.0)
      fail(path, "must be strictly ascending within (0, 1]");
    prev = s;
  }
}

json raw_to_json(const RawCounts& raw, EvalKind kind) {
  json out;
  switch (kind) {
    case EvalKind::ReadoutParams:
      out["readout_first"] = raw.readout_first;
      out["readout_second"] = raw.readout_second;
      out["saturation_first"] = raw.saturation_first;
      out["saturation_second"] = raw.saturation_second;
      break;
    case EvalKind::PodmrFom:
    case EvalKind::RamseyGateFom:
      out["scales"] = raw.scales;
      out["counts_first"] = raw.counts_first;
      out["counts_second"] = raw.counts_second;
      out["contrast"] = raw.contrast;
      break;
    case EvalKind::Spectrum:
      out["detunings_mhz"] = raw.detunings_mhz;
      out["scales"] = raw.scales;
      out["normalized_rows"] = raw.normalized_rows;
      out["mean_reference_counts"] = raw.mean_reference_counts;
      break;
    case EvalKind::Fringe:
      out["delays_ns"] = raw.delays_ns;
      out["normalized"] = raw.normalized;
      break;
  }
  return out;
}

RawCounts raw_from_json(const json& obj, EvalKind kind,
                        const std::string& path) {
  RawCounts out;
  switch (kind) {
    case EvalKind::ReadoutParams:
      out.readout_first = non_negative(obj, "readout_first", path);
      out.readout_second = non_negative(obj, "readout_second", path);
      out.saturation_first = non_negative(obj, "saturation_first", path);
      out.saturation_second = non_negative(obj, "saturation_second", path);
      break;
    case EvalKind::PodmrFom:
    case EvalKind::RamseyGateFom:
      out.scales = finite_array(obj, "scales", path);
      out.counts_first = finite_array(obj, "counts_first", path);
      out.counts_second = finite_array(obj, "counts_second", path);
      out.contrast = finite_array(obj, "contrast", path);
      break;
    case EvalKind::Spectrum: {
      out.detunings_mhz = finite_array(obj, "detunings_mhz", path);
      out.scales = finite_array(obj, "scales", path);
      const json& rows = member(obj, "normalized_rows", path);
      if (!rows.is_array()) fail(path + "normalized_rows", "must be an array");
      for (const auto& row : rows) {
        if (!row.is_array())
          fail(path + "normalized_rows", "rows must be arrays");
        std::vector<double> r;
        for (const auto& e : row) {
          if (!e.is_number() || !std::isfinite(e.get<double>()))
            fail(path + "normalized_rows", "elements must be finite numbers");
          r.push_back(e.get<double>());
        }
        out.normalized_rows.push_back(std::move(r));
      }
      out.mean_reference_counts =
          non_negative(obj, "mean_reference_counts", path);
      break;
    }
    case EvalKind::Fringe:
      out.delays_ns = finite_array(obj, "delays_ns", path);
      out.normalized = finite_array(obj, "normalized", path);
      break;
  }
  return out;
}

json parse_line(const std::string& line) {
  json obj = json::parse(line, nullptr, false);
  if (obj.is_discarded()) fail("", "not valid structured text");
  if (!obj.is_object()) fail("", "top level must be an object");
  const auto v = obj.find("v");
  if (v == obj.end() || !v->is_number_integer())
    fail("v", "missing protocol version");
  if (v->get<int>() != kProtocolVersion)
    fail("v", "unsupported protocol version");
  return obj;
}

std::string type_field(const json& obj) {
  const auto it = obj.find("type");
  if (it == obj.end() || !it->is_string()) fail("type", "missing message type");
  return it->get<std::string>();
}

} // namespace

std::string to_string(EvalKind kind) {
  switch (kind) {
    case EvalKind::ReadoutParams: return "readout-params";
    case EvalKind::PodmrFom: return "podmr-fom";
    case EvalKind::RamseyGateFom: return "ramsey-gate-fom";
    case EvalKind::Spectrum: return "spectrum";
    case EvalKind::Fringe: return "fringe";
  }
  fail("kind", "unknown evaluation kind");
}

EvalKind eval_kind_from_string(const std::string& name) {
  if (name == "readout-params") return EvalKind::ReadoutParams;
  if (name == "podmr-fom") return EvalKind::PodmrFom;
  if (name == "ramsey-gate-fom") return EvalKind::RamseyGateFom;
  if (name == "spectrum") return EvalKind::Spectrum;
  if (name == "fringe") return EvalKind::Fringe;
  fail("kind", "unknown evaluation kind '" + name + "'");
}

std::string encode(const EvalRequest& request) {
  json payload;
  switch (request.kind) {
    case EvalKind::ReadoutParams:
      payload = {{"laser_power_mw", request.laser_power_mw},
                 {"laser_duration_ns", request.laser_duration_ns},
                 {"readout_window_ns", request.readout_window_ns},
                 {"wait_duration_ns", request.wait_duration_ns}};
      break;
    case EvalKind::PodmrFom:
    case EvalKind::RamseyGateFom:
      payload = {{"pulse", pulse_to_json(request.pulse)},
                 {"scales", request.scales},
                 {"carrier_detuning_mhz", request.carrier_detuning_mhz}};
      break;
    case EvalKind::Spectrum:
      payload = {{"pulse", pulse_to_json(request.pulse)},
                 {"scales", request.scales},
                 {"detunings_mhz", request.detunings_mhz}};
      break;
    case EvalKind::Fringe:
      payload = {{"pulse", pulse_to_json(request.pulse)},
                 {"delays_ns", request.delays_ns},
                 {"carrier_detuning_mhz", request.carrier_detuning_mhz},
                 {"amplitude_scale", request.amplitude_scale}};
      break;
  }
  json obj{{"v", kProtocolVersion},
           {"type", "request"},
           {"id", request.id},
           {"kind", to_string(request.kind)},
           {"return_raw", request.return_raw},
           {"payload", payload}};
  if (request.shots) {
    obj["shots"] = {{"repetitions", request.shots->repetitions},
                    {"shots_per_repetition", request.shots->shots_per_repetition}};
  }
  return obj.dump();
}

std::string encode(const EvalResponse& response) {
  json obj{{"v", kProtocolVersion},
           {"type", "response"},
           {"id", response.id},
           {"fom", response.fom},
           {"std_error", response.std_error},
           {"seconds", response.seconds}};
  if (response.raw) {
    // the raw block is self-describing: store which schema it follows
    EvalKind kind = EvalKind::ReadoutParams;
    if (!response.raw->contrast.empty() || !response.raw->counts_first.empty())
      kind = EvalKind::PodmrFom;
    if (!response.raw->normalized_rows.empty()) kind = EvalKind::Spectrum;
    if (!response.raw->normalized.empty()) kind = EvalKind::Fringe;
    obj["raw_kind"] = to_string(kind);
    obj["raw"] = raw_to_json(*response.raw, kind);
  }
  return obj.dump();
}

std::string encode(const ErrorResponse& error) {
  return json{{"v", kProtocolVersion},
              {"type", "error"},
              {"id", error.id},
              {"field", error.field},
              {"message", error.message}}
      .dump();
}

MessageType message_type(const std::string& line) {
  const json obj = parse_line(line);
  const std::string type = type_field(obj);
  if (type == "request") return MessageType::Request;
  if (type == "response") return MessageType::Response;
  if (type == "error") return MessageType::Error;
  fail("type", "unknown message type '" + type + "'");
}

EvalRequest parse_request(const std::string& line) {
  const json obj = parse_line(line);
  if (type_field(obj) != "request") fail("type", "expected a request");

  EvalRequest out;
  out.id = uint_field(obj, "id", "");
  if (out.id == 0) fail("id", "must be a positive integer");

  const json& kind = member(obj, "kind", "");
  if (!kind.is_string()) fail("kind", "must be a string");
  out.kind = eval_kind_from_string(kind.get<std::string>());

  if (const auto it = obj.find("return_raw"); it != obj.end()) {
    if (!it->is_boolean()) fail("return_raw", "must be a boolean");
    out.return_raw = it->get<bool>();
  }
  if (const auto it = obj.find("shots"); it != obj.end()) {
    ShotBudget budget;
    const std::uint64_t reps = uint_field(*it, "repetitions", "shots.");
    const std::uint64_t per = uint_field(*it, "shots_per_repetition", "shots.");
    if (reps < 2) fail("shots.repetitions", "need at least two repetitions");
    if (per < 1) fail("shots.shots_per_repetition", "must be at least one");
    if (reps > std::numeric_limits<std::uint32_t>::max() ||
        per > std::numeric_limits<std::uint32_t>::max())
      fail("shots", "budget out of range");
    budget.repetitions = static_cast<std::uint32_t>(reps);
    budget.shots_per_repetition = static_cast<std::uint32_t>(per);
    out.shots = budget;
  }

  const json& payload = member(obj, "payload", "");
  const std::string p = "payload.";
  switch (out.kind) {
    case EvalKind::ReadoutParams:
      out.laser_power_mw = positive(payload, "laser_power_mw", p);
      out.laser_duration_ns = positive(payload, "laser_duration_ns", p);
      out.readout_window_ns = positive(payload, "readout_window_ns", p);
      out.wait_duration_ns = non_negative(payload, "wait_duration_ns", p);
      if (out.readout_window_ns > out.laser_duration_ns)
        fail(p + "readout_window_ns", "cannot exceed laser_duration_ns");
      break;
    case EvalKind::PodmrFom:
    case EvalKind::RamseyGateFom:
      out.pulse = pulse_from_json(member(payload, "pulse", p), p + "pulse.");
      out.scales = finite_array(payload, "scales", p);
      check_scales(out.scales, p + "scales");
      out.carrier_detuning_mhz = number(payload, "carrier_detuning_mhz", p);
      break;
    case EvalKind::Spectrum:
      out.pulse = pulse_from_json(member(payload, "pulse", p), p + "pulse.");
      out.scales = finite_array(payload, "scales", p);
      check_scales(out.scales, p + "scales");
      out.detunings_mhz = finite_array(payload, "detunings_mhz", p);
      break;
    case EvalKind::Fringe:
      out.pulse = pulse_from_json(member(payload, "pulse", p), p + "pulse.");
      out.delays_ns = finite_array(payload, "delays_ns", p);
      for (const double d : out.delays_ns)
        if (d < 0.0) fail(p + "delays_ns", "must be non-negative");
      out.carrier_detuning_mhz = number(payload, "carrier_detuning_mhz", p);
      out.amplitude_scale = positive(payload, "amplitude_scale", p);
      if (out.amplitude_scale > 1.0)
        fail(p + "amplitude_scale", "must lie in (0, 1]");
      break;
  }
  return out;
}

EvalResponse parse_response(const std::string& line) {
  const json obj = parse_line(line);
  if (type_field(obj) != "response") fail("type", "expected a response");
  EvalResponse out;
  out.id = uint_field(obj, "id", "");
  out.fom = number(obj, "fom", "");
  out.std_error = number(obj, "std_error", "");
  if (out.std_error < 0.0) fail("std_error", "must be non-negative");
  out.seconds = non_negative(obj, "seconds", "");
  if (const auto it = obj.find("raw"); it != obj.end()) {
    const json& kind = member(obj, "raw_kind", "");
    if (!kind.is_string()) fail("raw_kind", "must be a string");
    out.raw = raw_from_json(*it, eval_kind_from_string(kind.get<std::string>()),
                            "raw.");
  }
  return out;
}

ErrorResponse parse_error(const std::string& line) {
  const json obj = parse_line(line);
  if (type_field(obj) != "error") fail("type", "expected an error");
  ErrorResponse out;
  out.id = uint_field(obj, "id", "");
  const json& field = member(obj, "field", "");
  if (!field.is_string()) fail("field", "must be a string");
  out.field = field.get<std::string>();
  const json& message = member(obj, "message", "");
  if (!message.is_string()) fail("message", "must be a string");
  out.message = message.get<std::string>();
  return out;
}

PulsePayload to_payload(const ControlPulse& pulse, double rabi_max) {
  if (!(rabi_max > 0.0))
    throw std::invalid_argument("to_payload: rabi_max must be positive");
  PulsePayload out;
  out.dt_ns = ns_from_seconds(pulse.dt);
  out.i.reserve(pulse.samples.size());
  out.q.reserve(pulse.samples.size());
  for (const IqSample& s : pulse.samples) {
    out.i.push_back(s.u1 / rabi_max);
    out.q.push_back(s.u2 / rabi_max);
  }
  return out;
}

ControlPulse to_pulse(const PulsePayload& payload, double rabi_max) {
  if (!(rabi_max > 0.0))
    throw std::invalid_argument("to_pulse: rabi_max must be positive");
  ControlPulse out;
  out.dt = seconds_from_ns(payload.dt_ns);
  out.samples.reserve(payload.i.size());
  for (std::size_t k = 0; k < payload.i.size(); ++k)
    out.samples.push_back({payload.i[k] * rabi_max, payload.q[k] * rabi_max});
  return out;
}

} // namespace nvqoc
