#include "nvqoc/run_log.hpp"

#include <json.hpp>

#include <cmath>
#include <cstdio>
#include <ctime>
#include <sstream>

#include "nvqoc/units.hpp"

namespace nvqoc {

using nlohmann::json;

namespace {

json parse_or_throw(const std::string& text, const char* what) {
  json j = json::parse(text, nullptr, false);
  if (j.is_discarded() || !j.is_object()) {
    throw LogError(std::string(what) + " is not a JSON object");
  }
  return j;
}

void check_version(const json& j, const char* what) {
  if (!j.contains("v") || !j["v"].is_number_integer() ||
      j["v"].get<int>() != kProtocolVersion) {
    throw LogError(std::string(what) + " has a missing or unsupported version");
  }
}

std::string format_sig(double value, const char* fmt) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), fmt, value);
  return buf;
}

} // namespace

std::string utc_timestamp_now() {
  const std::time_t now = std::time(nullptr);
  std::tm utc{};
  gmtime_r(&now, &utc);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &utc);
  return buf;
}

JsonlWriter::JsonlWriter(const std::string& path)
    : path_(path), out_(path, std::ios::app) {
  if (!out_) throw LogError("cannot open log file '" + path + "' for append");
}

void JsonlWriter::append(const std::string& line) {
  out_ << line << '\n';
  out_.flush();
  if (!out_) throw LogError("write to log file '" + path_ + "' failed");
}

std::vector<std::string> read_complete_lines(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LogError("cannot open log file '" + path + "'");
  std::ostringstream all;
  all << in.rdbuf();
  const std::string text = all.str();

  std::vector<std::string> lines;
  std::size_t start = 0;
  for (;;) {
    const std::size_t pos = text.find('\n', start);
    if (pos == std::string::npos) break; // unterminated fragment: dropped
    if (pos > start) lines.push_back(text.substr(start, pos - start));
    start = pos + 1;
  }
  return lines;
}

std::string encode_log_meta(const LogMeta& meta) {
  json j;
  j["v"] = kProtocolVersion;
  j["type"] = "meta";
  j["run"] = meta.run_kind;
  j["seed"] = meta.master_seed;
  j["config"] = parse_or_throw(meta.config_json, "meta config");
  j["optimizer"] = parse_or_throw(meta.optimizer_json, "meta optimizer");
  j["timestamp"] = meta.timestamp;
  return j.dump();
}

std::string encode_log_eval(const std::string& request_line,
                            const std::string& response_line) {
  json j;
  j["v"] = kProtocolVersion;
  j["type"] = "eval";
  j["request"] = parse_or_throw(request_line, "eval request");
  j["response"] = parse_or_throw(response_line, "eval response");
  return j.dump();
}

std::string log_record_type(const std::string& line) {
  json j = json::parse(line, nullptr, false);
  if (j.is_discarded() || !j.is_object()) return "";
  if (!j.contains("type") || !j["type"].is_string()) return "";
  return j["type"].get<std::string>();
}

LogMeta parse_log_meta(const std::string& line) {
  json j = parse_or_throw(line, "meta record");
  check_version(j, "meta record");
  if (j.value("type", "") != "meta") throw LogError("not a meta record");
  LogMeta meta;
  meta.run_kind = j.value("run", "");
  meta.master_seed = j.value("seed", std::uint64_t{0});
  if (!j.contains("config") || !j["config"].is_object()) {
    throw LogError("meta record lacks a config object");
  }
  meta.config_json = j["config"].dump();
  meta.optimizer_json =
      j.contains("optimizer") ? j["optimizer"].dump() : std::string("{}");
  meta.timestamp = j.value("timestamp", "");
  return meta;
}

LogEval parse_log_eval(const std::string& line) {
  json j = parse_or_throw(line, "eval record");
  check_version(j, "eval record");
  if (j.value("type", "") != "eval") throw LogError("not an eval record");
  if (!j.contains("request") || !j["request"].is_object() ||
      !j.contains("response") || !j["response"].is_object()) {
    throw LogError("eval record lacks request/response objects");
  }
  LogEval eval;
  eval.request_line = j["request"].dump();
  eval.response_line = j["response"].dump();
  return eval;
}

std::string encode_manifest(const RunManifest& manifest) {
  json j;
  j["v"] = manifest.protocol_version;
  j["type"] = "manifest";
  j["run"] = manifest.run_kind;
  j["seed"] = manifest.master_seed;
  j["noiseless"] = manifest.noiseless;
  j["config"] = parse_or_throw(manifest.config_json, "manifest config");
  j["optimizer"] =
      parse_or_throw(manifest.optimizer_json, "manifest optimizer");
  j["started"] = manifest.started_utc;
  j["finished"] = manifest.finished_utc;

  json result;
  if (std::isfinite(manifest.best_fom)) result["best_fom"] = manifest.best_fom;
  result["evaluations"] = manifest.evaluations;
  if (!manifest.best_parameters.empty()) {
    result["best_parameters"] = manifest.best_parameters;
  }
  if (!manifest.pulse_path.empty()) result["pulse_path"] = manifest.pulse_path;
  if (!manifest.log_path.empty()) result["log_path"] = manifest.log_path;
  j["result"] = result;

  if (manifest.next_superiteration > 0) {
    json cp;
    cp["next_superiteration"] = manifest.next_superiteration;
    cp["dt"] = manifest.checkpoint_dt;
    cp["i"] = manifest.checkpoint_i;
    cp["q"] = manifest.checkpoint_q;
    cp["next_request_id"] = manifest.next_request_id;
    j["checkpoint"] = cp;
  } else if (manifest.next_request_id > 1) {
    json cp;
    cp["next_request_id"] = manifest.next_request_id;
    j["checkpoint"] = cp;
  }
  return j.dump(2);
}

RunManifest parse_manifest(const std::string& text) {
  json j = parse_or_throw(text, "manifest");
  check_version(j, "manifest");
  if (j.value("type", "") != "manifest") throw LogError("not a manifest");

  RunManifest m;
  m.protocol_version = j["v"].get<int>();
  m.run_kind = j.value("run", "");
  if (m.run_kind.empty()) throw LogError("manifest lacks a run kind");
  m.master_seed = j.value("seed", std::uint64_t{0});
  m.noiseless = j.value("noiseless", false);
  if (!j.contains("config") || !j["config"].is_object()) {
    throw LogError("manifest lacks a config object");
  }
  m.config_json = j["config"].dump();
  m.optimizer_json =
      j.contains("optimizer") ? j["optimizer"].dump() : std::string("{}");
  m.started_utc = j.value("started", "");
  m.finished_utc = j.value("finished", "");

  if (j.contains("result") && j["result"].is_object()) {
    const json& r = j["result"];
    if (r.contains("best_fom")) m.best_fom = r["best_fom"].get<double>();
    m.evaluations = r.value("evaluations", std::uint64_t{0});
    if (r.contains("best_parameters")) {
      m.best_parameters = r["best_parameters"].get<std::vector<double>>();
    }
    m.pulse_path = r.value("pulse_path", "");
    m.log_path = r.value("log_path", "");
  }

  if (j.contains("checkpoint") && j["checkpoint"].is_object()) {
    const json& cp = j["checkpoint"];
    m.next_superiteration = cp.value("next_superiteration", 0);
    m.checkpoint_dt = cp.value("dt", 0.0);
    if (cp.contains("i")) m.checkpoint_i = cp["i"].get<std::vector<double>>();
    if (cp.contains("q")) m.checkpoint_q = cp["q"].get<std::vector<double>>();
    m.next_request_id = cp.value("next_request_id", std::uint64_t{1});
    if (m.checkpoint_i.size() != m.checkpoint_q.size()) {
      throw LogError("manifest checkpoint waveform channels differ in length");
    }
  }
  return m;
}

void save_manifest(const RunManifest& manifest, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw LogError("cannot open manifest file '" + path + "'");
  out << encode_manifest(manifest) << '\n';
  out.flush();
  if (!out) throw LogError("write to manifest file '" + path + "' failed");
}

RunManifest load_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw LogError("cannot open manifest file '" + path + "'");
  std::ostringstream all;
  all << in.rdbuf();
  return parse_manifest(all.str());
}

void save_pulse_file(const std::string& path, const ControlPulse& pulse,
                     double rabi_max) {
  if (!(rabi_max > 0.0)) {
    throw LogError("pulse file needs a positive drive cap");
  }
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw LogError("cannot open pulse file '" + path + "'");

  out << "# pulse v1\n";
  out << "# dt_ns " << format_sig(ns_from_seconds(pulse.dt), "%.17g") << "\n";
  out << "# rabi_max_mhz "
      << format_sig(rabi_max / (kTwoPi * 1e6), "%.17g") << "\n";
  out << "# columns: t_ns i_frac q_frac\n";
  const double dt_ns = ns_from_seconds(pulse.dt);
  for (std::size_t k = 0; k < pulse.samples.size(); ++k) {
    out << format_sig(static_cast<double>(k) * dt_ns, "%.9g") << ' '
        << format_sig(pulse.samples[k].u1 / rabi_max, "%.9g") << ' '
        << format_sig(pulse.samples[k].u2 / rabi_max, "%.9g") << '\n';
  }
  out.flush();
  if (!out) throw LogError("write to pulse file '" + path + "' failed");
}

ControlPulse load_pulse_file(const std::string& path, double* rabi_max_out) {
  std::ifstream in(path);
  if (!in) throw LogError("cannot open pulse file '" + path + "'");

  double dt_ns = 0.0;
  double rabi_max_mhz = 0.0;
  bool have_dt = false;
  bool have_rabi = false;
  ControlPulse pulse;

  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (line[0] == '#') {
      std::istringstream header(line.substr(1));
      std::string key;
      header >> key;
      if (key == "dt_ns") {
        header >> dt_ns;
        have_dt = !header.fail();
      } else if (key == "rabi_max_mhz") {
        header >> rabi_max_mhz;
        have_rabi = !header.fail();
      }
      continue;
    }
    std::istringstream row(line);
    double t_ns = 0.0;
    double i_frac = 0.0;
    double q_frac = 0.0;
    if (!(row >> t_ns >> i_frac >> q_frac)) {
      throw LogError("malformed pulse file row: '" + line + "'");
    }
    pulse.samples.push_back(IqSample{i_frac, q_frac});
  }

  if (!have_dt || !(dt_ns > 0.0)) {
    throw LogError("pulse file lacks a positive dt_ns header");
  }
  if (!have_rabi || !(rabi_max_mhz > 0.0)) {
    throw LogError("pulse file lacks a positive rabi_max_mhz header");
  }
  if (pulse.samples.empty()) throw LogError("pulse file has no samples");

  const double rabi_max = kTwoPi * 1e6 * rabi_max_mhz;
  for (IqSample& s : pulse.samples) {
    s.u1 *= rabi_max;
    s.u2 *= rabi_max;
  }
  pulse.dt = seconds_from_ns(dt_ns);
  if (!pulse.finite()) throw LogError("pulse file holds non-finite samples");
  if (rabi_max_out != nullptr) *rabi_max_out = rabi_max;
  return pulse;
}

} // namespace nvqoc
