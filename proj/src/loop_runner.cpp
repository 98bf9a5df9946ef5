#include "nvqoc/loop_runner.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <map>
#include <sstream>

#include "nvqoc/eval_service.hpp"
#include "nvqoc/pulse_basis.hpp"
#include "nvqoc/sensitivity.hpp"
#include "nvqoc/units.hpp"

namespace nvqoc {

using nlohmann::json;

namespace {

std::string fmt(double value) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.6g", value);
  return buf;
}

bool bit_equal(double a, double b) {
  return std::memcmp(&a, &b, sizeof(double)) == 0;
}

// One request over the transport: structured errors become exceptions, the
// exact lines exchanged are kept for the log.
struct Exchange {
  EvalResponse response;
  std::string request_line;
  std::string response_line;
};

Exchange exchange(RequestTransport& transport, const EvalRequest& request) {
  Exchange ex;
  ex.request_line = encode(request);
  ex.response_line = transport.roundtrip(ex.request_line);
  if (message_type(ex.response_line) == MessageType::Error) {
    const ErrorResponse err = parse_error(ex.response_line);
    throw EvalRejected(err.field, err.message);
  }
  ex.response = parse_response(ex.response_line);
  if (ex.response.id != request.id) {
    throw TransportError("response id " + std::to_string(ex.response.id) +
                         " does not match request id " +
                         std::to_string(request.id));
  }
  return ex;
}

json simplex_to_json(const NelderMeadConfig& c) {
  json j;
  j["max_evaluations"] = c.max_evaluations;
  j["tol_f"] = c.tol_f;
  j["initial_step_fraction"] = c.initial_step_fraction;
  j["alpha"] = c.alpha;
  j["gamma"] = c.gamma;
  j["rho"] = c.rho;
  j["sigma"] = c.sigma;
  j["reevaluate_every"] = c.reevaluate_every;
  j["max_retries"] = c.max_retries;
  return j;
}

NelderMeadConfig simplex_from_json(const json& j) {
  NelderMeadConfig c;
  c.max_evaluations = j.value("max_evaluations", c.max_evaluations);
  c.tol_f = j.value("tol_f", c.tol_f);
  c.initial_step_fraction =
      j.value("initial_step_fraction", c.initial_step_fraction);
  c.alpha = j.value("alpha", c.alpha);
  c.gamma = j.value("gamma", c.gamma);
  c.rho = j.value("rho", c.rho);
  c.sigma = j.value("sigma", c.sigma);
  c.reevaluate_every = j.value("reevaluate_every", c.reevaluate_every);
  c.max_retries = j.value("max_retries", c.max_retries);
  return c;
}

void shots_to_json(json& j, const std::optional<ShotBudget>& shots) {
  if (!shots) return;
  j["shots"] = json{{"repetitions", shots->repetitions},
                    {"shots_per_repetition", shots->shots_per_repetition}};
}

std::optional<ShotBudget> shots_from_json(const json& j) {
  if (!j.contains("shots") || !j["shots"].is_object()) return std::nullopt;
  ShotBudget budget;
  budget.repetitions = j["shots"].value("repetitions", budget.repetitions);
  budget.shots_per_repetition =
      j["shots"].value("shots_per_repetition", budget.shots_per_repetition);
  return budget;
}

json options_root(const std::string& text, const char* expected_kind) {
  json j = json::parse(text, nullptr, false);
  if (j.is_discarded() || !j.is_object()) {
    throw LogError("optimizer settings are not a JSON object");
  }
  const std::string kind = j.value("kind", "");
  if (kind.rfind(expected_kind, 0) != 0) {
    throw LogError("optimizer settings are for '" + kind + "', expected '" +
                   expected_kind + "'");
  }
  return j;
}

void fill_checkpoint(RunManifest& manifest, const ControlPulse& raw) {
  manifest.checkpoint_dt = raw.dt;
  manifest.checkpoint_i.resize(raw.samples.size());
  manifest.checkpoint_q.resize(raw.samples.size());
  for (std::size_t k = 0; k < raw.samples.size(); ++k) {
    manifest.checkpoint_i[k] = raw.samples[k].u1;
    manifest.checkpoint_q[k] = raw.samples[k].u2;
  }
}

} // namespace

// ---------------------------------------------------------------------------
// Step 1
// ---------------------------------------------------------------------------

SearchSpace step1_search_space() {
  SearchSpace space;
  space.parameters = {ParameterSpec{"laser_power_mw", 2.0, 40.0},
                      ParameterSpec{"laser_duration_ns", 300.0, 2000.0},
                      ParameterSpec{"readout_window_ns", 75.0, 1500.0},
                      ParameterSpec{"wait_duration_ns", 0.0, 1000.0}};
  CoupledBound window;
  window.parameter = 2;
  window.bounds = [](const std::vector<double>& x) {
    return std::make_pair(0.25 * x[1], 0.75 * x[1]);
  };
  space.coupled.push_back(window);
  return space;
}

std::vector<double> step1_default_guess(double saturation_power_mw) {
  double power = saturation_power_mw > 0.0 ? saturation_power_mw : 10.0;
  power = std::clamp(power, 2.0, 40.0);
  return {power, 1000.0, 450.0, 300.0};
}

std::string encode_step1_options(const Step1Options& options) {
  json j;
  j["kind"] = "step1";
  j["simplex"] = simplex_to_json(options.simplex);
  if (!options.initial_guess.empty()) {
    j["initial_guess"] = options.initial_guess;
  }
  shots_to_json(j, options.shots);
  j["first_request_id"] = options.first_request_id;
  return j.dump();
}

Step1Options parse_step1_options(const std::string& optimizer_json) {
  const json j = options_root(optimizer_json, "step1");
  Step1Options options;
  if (j.contains("simplex")) options.simplex = simplex_from_json(j["simplex"]);
  if (j.contains("initial_guess")) {
    options.initial_guess = j["initial_guess"].get<std::vector<double>>();
  }
  options.shots = shots_from_json(j);
  options.first_request_id =
      j.value("first_request_id", options.first_request_id);
  return options;
}

Step1Result run_step1(RequestTransport& transport,
                      const SimulatorConfig& config_in,
                      const Step1Options& options,
                      const std::string& log_path,
                      const std::string& manifest_path,
                      const ProgressFn& progress) {
  // Replays recompute from the manifest's serialized config; working from the
  // same fixed point keeps run and replay bit-identical.
  const SimulatorConfig config = canonical_simulator_config(config_in);
  const SearchSpace space = step1_search_space();

  Step1Options resolved = options;
  if (resolved.initial_guess.empty()) {
    resolved.initial_guess =
        step1_default_guess(config.model.rates.saturation_power);
  }
  resolved.initial_guess = space.project(resolved.initial_guess);

  const std::string config_json = encode_simulator_config(config);
  const std::string optimizer_json = encode_step1_options(resolved);

  JsonlWriter log(log_path);
  LogMeta meta;
  meta.run_kind = "step1";
  meta.master_seed = resolved.master_seed;
  meta.config_json = config_json;
  meta.optimizer_json = optimizer_json;
  meta.timestamp = utc_timestamp_now();
  log.append(encode_log_meta(meta));

  RunManifest manifest;
  manifest.run_kind = "step1";
  manifest.master_seed = resolved.master_seed;
  manifest.noiseless = config.noiseless;
  manifest.config_json = config_json;
  manifest.optimizer_json = optimizer_json;
  manifest.started_utc = meta.timestamp;
  manifest.log_path = log_path;

  std::uint64_t next_id = resolved.first_request_id;
  double last_std_error = 0.0;
  const FomFunction fom_fn = [&](const std::vector<double>& x) {
    EvalRequest request;
    request.id = next_id++;
    request.kind = EvalKind::ReadoutParams;
    request.shots = resolved.shots;
    request.return_raw = false;
    request.laser_power_mw = x[0];
    request.laser_duration_ns = x[1];
    request.readout_window_ns = x[2];
    request.wait_duration_ns = x[3];
    const Exchange ex = exchange(transport, request);
    log.append(encode_log_eval(ex.request_line, ex.response_line));
    last_std_error = ex.response.std_error;
    return ex.response.fom;
  };

  EvaluationCallback on_eval;
  if (progress) {
    on_eval = [&](const EvaluationRecord& rec) {
      progress("eval " + std::to_string(rec.evaluation) + "  fom " +
               fmt(rec.fom) + "  best " + fmt(rec.best_fom) + "  se " +
               fmt(last_std_error));
    };
  }

  Step1Result result;
  result.state =
      nelder_mead(space, resolved.initial_guess, fom_fn, resolved.simplex,
                  on_eval);

  manifest.best_fom = result.state.best_fom;
  manifest.best_parameters = result.state.best_point;
  manifest.evaluations =
      static_cast<std::uint64_t>(result.state.evaluations);
  manifest.next_request_id = next_id;
  if (!result.state.aborted) manifest.finished_utc = utc_timestamp_now();
  save_manifest(manifest, manifest_path);
  result.manifest = manifest;

  if (progress) {
    std::ostringstream line;
    line << (result.state.aborted ? "aborted" : "done") << " after "
         << result.state.evaluations << " evaluations, best fom "
         << fmt(result.state.best_fom);
    progress(line.str());
  }
  return result;
}

// ---------------------------------------------------------------------------
// Step 2
// ---------------------------------------------------------------------------

std::string to_string(Step2Kind kind) {
  return kind == Step2Kind::Podmr ? "podmr" : "gate";
}

Step2Kind step2_kind_from_string(const std::string& name) {
  if (name == "podmr" || name == "step2-podmr") return Step2Kind::Podmr;
  if (name == "gate" || name == "step2-gate") return Step2Kind::Gate;
  throw LogError("unknown pulse optimization kind '" + name + "'");
}

namespace {

json dcrab_to_json(const DcrabConfig& c) {
  json j;
  j["n_set"] = c.n_set;
  j["max_superiterations"] = c.max_superiterations;
  j["basis"] = c.basis_kind == BasisKind::Fourier ? "fourier" : "sigmoid";
  json r;
  r["mode"] = c.restriction.mode == RestrictionMode::CutOff
                  ? "cutoff"
                  : "bandwidth-limited";
  r["amplitude_limit"] = c.restriction.amplitude_limit;
  r["window_edge_fraction"] = c.restriction.window_edge_fraction;
  r["window_sigma_fraction"] = c.restriction.window_sigma_fraction;
  j["restriction"] = r;
  j["simplex"] = simplex_to_json(c.simplex);
  j["coefficient_limit"] = c.coefficient_limit;
  j["tol_super"] = c.tol_super;
  j["seed"] = c.seed;
  j["first_superiteration"] = c.first_superiteration;
  return j;
}

DcrabConfig dcrab_from_json(const json& j) {
  DcrabConfig c;
  c.n_set = j.value("n_set", c.n_set);
  c.max_superiterations =
      j.value("max_superiterations", c.max_superiterations);
  const std::string basis = j.value("basis", "fourier");
  if (basis == "fourier") {
    c.basis_kind = BasisKind::Fourier;
  } else if (basis == "sigmoid") {
    c.basis_kind = BasisKind::Sigmoid;
  } else {
    throw LogError("unknown basis kind '" + basis + "'");
  }
  if (j.contains("restriction") && j["restriction"].is_object()) {
    const json& r = j["restriction"];
    const std::string mode = r.value("mode", "cutoff");
    if (mode == "cutoff") {
      c.restriction.mode = RestrictionMode::CutOff;
    } else if (mode == "bandwidth-limited") {
      c.restriction.mode = RestrictionMode::BandwidthLimited;
    } else {
      throw LogError("unknown restriction mode '" + mode + "'");
    }
    c.restriction.amplitude_limit =
        r.value("amplitude_limit", c.restriction.amplitude_limit);
    c.restriction.window_edge_fraction =
        r.value("window_edge_fraction", c.restriction.window_edge_fraction);
    c.restriction.window_sigma_fraction =
        r.value("window_sigma_fraction", c.restriction.window_sigma_fraction);
  }
  if (j.contains("simplex")) c.simplex = simplex_from_json(j["simplex"]);
  c.coefficient_limit = j.value("coefficient_limit", c.coefficient_limit);
  c.tol_super = j.value("tol_super", c.tol_super);
  c.seed = j.value("seed", c.seed);
  c.first_superiteration =
      j.value("first_superiteration", c.first_superiteration);
  return c;
}

} // namespace

std::string encode_step2_options(const Step2Options& options) {
  json j;
  j["kind"] = "step2-" + to_string(options.kind);
  j["dcrab"] = dcrab_to_json(options.dcrab);
  j["scales"] = options.scales;
  j["duration_factor"] = options.duration_factor;
  j["samples"] = options.samples;
  shots_to_json(j, options.shots);
  // Always the full-run view: a replay regenerates every superiteration, so
  // the id sequence restarts at 1 regardless of how the original run was
  // split across sessions.
  j["first_request_id"] = 1;
  return j.dump();
}

Step2Options parse_step2_options(const std::string& optimizer_json) {
  const json j = options_root(optimizer_json, "step2");
  Step2Options options;
  options.kind = step2_kind_from_string(j.value("kind", "step2-podmr"));
  if (j.contains("dcrab")) options.dcrab = dcrab_from_json(j["dcrab"]);
  if (j.contains("scales")) {
    options.scales = j["scales"].get<std::vector<double>>();
  }
  options.duration_factor =
      j.value("duration_factor", options.duration_factor);
  options.samples = j.value("samples", options.samples);
  options.shots = shots_from_json(j);
  options.first_request_id =
      j.value("first_request_id", options.first_request_id);
  return options;
}

ControlPulse step2_initial_pulse(const Step2Options& options,
                                 const NvModel& model) {
  const double area = options.kind == Step2Kind::Podmr ? kPi : 0.5 * kPi;
  const double factor = std::max(1.0, options.duration_factor);
  const double duration = factor * area / model.rabi_max;
  const int n = std::max(8, options.samples);
  return make_rectangular_pulse(model.rabi_max / factor, duration,
                                duration / n);
}

Step2Result run_step2(RequestTransport& transport,
                      const SimulatorConfig& config_in,
                      const Step2Options& options,
                      const std::string& log_path,
                      const std::string& manifest_path,
                      const std::string& pulse_path,
                      const ProgressFn& progress) {
  const SimulatorConfig config = canonical_simulator_config(config_in);
  const double rabi_max = config.model.rabi_max;

  Step2Options resolved = options;
  if (resolved.scales.empty()) resolved.scales = {0.2, 0.4, 0.6, 0.8, 1.0};
  if (resolved.dcrab.restriction.amplitude_limit <= 0.0) {
    resolved.dcrab.restriction.amplitude_limit = rabi_max;
  }

  Step2Options recorded = resolved; // full-run view for log and manifest
  recorded.first_request_id = 1;
  recorded.resume_superiteration = 0;
  recorded.resume_raw.reset();
  recorded.resume_best_fom = std::numeric_limits<double>::infinity();

  const std::string run_kind = "step2-" + to_string(resolved.kind);
  const std::string config_json = encode_simulator_config(config);
  const std::string optimizer_json = encode_step2_options(recorded);

  JsonlWriter log(log_path);
  LogMeta meta;
  meta.run_kind = run_kind;
  meta.master_seed = resolved.master_seed;
  meta.config_json = config_json;
  meta.optimizer_json = optimizer_json;
  meta.timestamp = utc_timestamp_now();
  log.append(encode_log_meta(meta));

  RunManifest manifest;
  manifest.run_kind = run_kind;
  manifest.master_seed = resolved.master_seed;
  manifest.noiseless = config.noiseless;
  manifest.config_json = config_json;
  manifest.optimizer_json = optimizer_json;
  manifest.started_utc = meta.timestamp;
  manifest.log_path = log_path;
  manifest.pulse_path = pulse_path;

  std::uint64_t next_id = resolved.first_request_id;
  double last_std_error = 0.0;
  const auto fom_fn = [&](const ControlPulse& pulse) {
    EvalRequest request;
    request.id = next_id++;
    request.kind = resolved.kind == Step2Kind::Podmr ? EvalKind::PodmrFom
                                                     : EvalKind::RamseyGateFom;
    request.shots = resolved.shots;
    request.return_raw = false;
    request.pulse = to_payload(pulse, rabi_max);
    request.scales = resolved.scales;
    const Exchange ex = exchange(transport, request);
    log.append(encode_log_eval(ex.request_line, ex.response_line));
    last_std_error = ex.response.std_error;
    return ex.response.fom;
  };

  ControlPulse carried = resolved.resume_raw
                             ? *resolved.resume_raw
                             : step2_initial_pulse(resolved, config.model);
  double overall_best = resolved.resume_raw
                            ? resolved.resume_best_fom
                            : std::numeric_limits<double>::infinity();

  Step2Result out;
  out.best_raw = carried;
  out.best_pulse = apply_restriction(resolved.dcrab.restriction, carried);
  OptimizerState& state = out.state;

  const int loop_first = resolved.resume_superiteration > 0
                             ? resolved.resume_superiteration
                             : resolved.dcrab.first_superiteration;
  const int loop_end = resolved.dcrab.first_superiteration +
                       resolved.dcrab.max_superiterations;

  int total_evaluations = 0;
  double running_best = std::numeric_limits<double>::infinity();

  for (int s = loop_first; s < loop_end; ++s) {
    const std::uint64_t superiteration_first_id = next_id;
    DcrabConfig one = resolved.dcrab;
    one.first_superiteration = s;
    one.max_superiterations = 1;

    const EvaluationCallback on_eval = [&](const EvaluationRecord& rec) {
      EvaluationRecord shifted = rec;
      shifted.evaluation = total_evaluations + rec.evaluation;
      running_best = std::min(running_best, rec.fom);
      shifted.best_fom = running_best;
      state.history.push_back(shifted);
      if (progress) {
        progress("super " + std::to_string(rec.superiteration) + "  eval " +
                 std::to_string(shifted.evaluation) + "  fom " + fmt(rec.fom) +
                 "  best " + fmt(std::min(running_best, overall_best)) +
                 "  se " + fmt(last_std_error));
      }
    };

    const DcrabResult r = dcrab_optimize(carried, fom_fn, one, on_eval);
    total_evaluations += r.state.evaluations;
    state.superiteration = s;
    state.evaluations = total_evaluations;

    // Accept-if-improved, mirroring the single-call superiteration driver so
    // the checkpointed loop retraces the monolithic one.
    const double previous_best = overall_best;
    if (r.state.best_sample_count > 0 && r.state.best_fom <= overall_best) {
      overall_best = r.state.best_fom;
      state.best_fom = r.state.best_fom;
      state.best_point = r.state.best_point;
      state.best_sample_count = r.state.best_sample_count;
      out.best_coefficients = r.best_coefficients;
      out.best_raw = r.best_raw;
      out.best_pulse = r.best_pulse;
    }

    if (r.state.aborted) {
      state.aborted = true;
      state.abort_reason = r.state.abort_reason;
      // Resume re-runs this superiteration with the same request ids, so the
      // retried evaluations reproduce the already-logged ones exactly.
      manifest.next_superiteration = s;
      manifest.next_request_id = superiteration_first_id;
      fill_checkpoint(manifest, carried);
      break;
    }

    state.superiteration_best.push_back(r.state.best_fom);
    carried = out.best_raw;

    manifest.best_fom = overall_best;
    manifest.evaluations = static_cast<std::uint64_t>(total_evaluations);
    manifest.next_superiteration = s + 1;
    manifest.next_request_id = next_id;
    fill_checkpoint(manifest, carried);
    save_manifest(manifest, manifest_path);
    save_pulse_file(pulse_path, out.best_pulse, rabi_max);

    if (progress) {
      progress("superiteration " + std::to_string(s) + " done, best fom " +
               fmt(overall_best));
    }

    if (previous_best - overall_best < resolved.dcrab.tol_super) {
      state.converged = true;
      break;
    }
  }

  state.best_fom = overall_best;
  manifest.best_fom = overall_best;
  manifest.evaluations = static_cast<std::uint64_t>(total_evaluations);
  if (!state.aborted) {
    manifest.finished_utc = utc_timestamp_now();
    manifest.next_superiteration = 0;
    manifest.checkpoint_i.clear();
    manifest.checkpoint_q.clear();
    manifest.checkpoint_dt = 0.0;
    manifest.next_request_id = next_id;
  }
  save_manifest(manifest, manifest_path);
  save_pulse_file(pulse_path, out.best_pulse, rabi_max);
  out.manifest = manifest;

  if (progress) {
    progress(std::string(state.aborted ? "aborted" : "done") + " after " +
             std::to_string(total_evaluations) + " evaluations, best fom " +
             fmt(overall_best));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Scans
// ---------------------------------------------------------------------------

namespace {

json pulse_payload_json(const PulsePayload& payload) {
  json j;
  j["dt_ns"] = payload.dt_ns;
  j["i"] = payload.i;
  j["q"] = payload.q;
  return j;
}

} // namespace

void run_amplitude_scan(RequestTransport& transport,
                        const SimulatorConfig& config_in,
                        const ControlPulse& pulse,
                        const std::vector<double>& scales,
                        const std::vector<double>& detunings_mhz,
                        const ScanOptions& options,
                        const std::string& log_path,
                        const ProgressFn& progress) {
  const SimulatorConfig config = canonical_simulator_config(config_in);
  if (scales.empty()) throw std::invalid_argument("no scan scales given");
  if (detunings_mhz.size() < 5) {
    throw std::invalid_argument("a spectrum needs at least five detunings");
  }
  const double rabi_max = config.model.rabi_max;
  const PulsePayload payload = to_payload(pulse, rabi_max);

  JsonlWriter log(log_path);
  json opt;
  opt["kind"] = "amplitude-scan";
  opt["scales"] = scales;
  opt["detunings_mhz"] = detunings_mhz;
  opt["pulse"] = pulse_payload_json(payload);
  shots_to_json(opt, options.shots);
  opt["first_request_id"] = options.first_request_id;

  LogMeta meta;
  meta.run_kind = "amplitude-scan";
  meta.master_seed = options.master_seed;
  meta.config_json = encode_simulator_config(config);
  meta.optimizer_json = opt.dump();
  meta.timestamp = utc_timestamp_now();
  log.append(encode_log_meta(meta));

  std::uint64_t next_id = options.first_request_id;
  for (const double scale : scales) {
    EvalRequest request;
    request.id = next_id++;
    request.kind = EvalKind::Spectrum;
    request.shots = options.shots;
    request.return_raw = true;
    request.pulse = payload;
    request.scales = {scale};
    request.detunings_mhz = detunings_mhz;
    const Exchange ex = exchange(transport, request);
    log.append(encode_log_eval(ex.request_line, ex.response_line));
    if (progress) {
      progress("scale " + fmt(scale) + "  dip depth " +
               fmt(1.0 - ex.response.fom));
    }
  }
}

void run_detuning_scan(RequestTransport& transport,
                       const SimulatorConfig& config_in,
                       const ControlPulse& half_pulse,
                       const std::vector<double>& carrier_detunings_mhz,
                       const std::vector<double>& delays_ns,
                       double amplitude_scale,
                       const ScanOptions& options,
                       const std::string& log_path,
                       const ProgressFn& progress) {
  const SimulatorConfig config = canonical_simulator_config(config_in);
  if (carrier_detunings_mhz.empty()) {
    throw std::invalid_argument("no carrier detunings given");
  }
  if (delays_ns.size() < 8) {
    throw std::invalid_argument("a fringe needs at least eight delays");
  }
  const double rabi_max = config.model.rabi_max;
  const PulsePayload payload = to_payload(half_pulse, rabi_max);

  JsonlWriter log(log_path);
  json opt;
  opt["kind"] = "detuning-scan";
  opt["carrier_detunings_mhz"] = carrier_detunings_mhz;
  opt["delays_ns"] = delays_ns;
  opt["amplitude_scale"] = amplitude_scale;
  opt["pulse"] = pulse_payload_json(payload);
  shots_to_json(opt, options.shots);
  opt["first_request_id"] = options.first_request_id;

  LogMeta meta;
  meta.run_kind = "detuning-scan";
  meta.master_seed = options.master_seed;
  meta.config_json = encode_simulator_config(config);
  meta.optimizer_json = opt.dump();
  meta.timestamp = utc_timestamp_now();
  log.append(encode_log_meta(meta));

  std::uint64_t next_id = options.first_request_id;
  for (const double detuning_mhz : carrier_detunings_mhz) {
    EvalRequest request;
    request.id = next_id++;
    request.kind = EvalKind::Fringe;
    request.shots = options.shots;
    request.return_raw = true;
    request.pulse = payload;
    request.carrier_detuning_mhz = detuning_mhz;
    request.delays_ns = delays_ns;
    request.amplitude_scale = amplitude_scale;
    const Exchange ex = exchange(transport, request);
    log.append(encode_log_eval(ex.request_line, ex.response_line));
    if (progress) {
      progress("detuning " + fmt(detuning_mhz) + " MHz  mean level " +
               fmt(ex.response.fom));
    }
  }
}

// ---------------------------------------------------------------------------
// Report
// ---------------------------------------------------------------------------

namespace {

SensitivityParams report_params(const SimulatorConfig& config,
                                double pulse_duration) {
  SensitivityParams p;
  p.measurement_time = podmr_measurement_time(
      config.readout.wait_duration, config.readout.laser_duration);
  p.initialization_time = config.readout.laser_duration;
  p.pi_duration = pulse_duration;
  p.t2_star = config.model.hyperfine.t2_star;
  p.decay_order = config.model.hyperfine.decay_order;
  return p;
}

double payload_duration(const PulsePayload& payload) {
  return seconds_from_ns(payload.dt_ns) *
         static_cast<double>(payload.i.size());
}

SensitivityRow amplitude_row(const EvalRequest& request,
                             const EvalResponse& response,
                             const SimulatorConfig& config) {
  SensitivityRow row;
  row.x = request.scales.empty() ? 0.0 : request.scales.front();
  if (!response.raw || response.raw->normalized_rows.empty()) {
    row.note = "record carries no raw spectrum";
    return row;
  }
  const std::vector<double>& normalized = response.raw->normalized_rows.front();
  const double reference = response.raw->mean_reference_counts;
  if (normalized.size() != request.detunings_mhz.size() || !(reference > 0.0)) {
    row.note = "raw spectrum is inconsistent";
    return row;
  }

  std::vector<double> frequencies(normalized.size());
  std::vector<double> counts(normalized.size());
  for (std::size_t i = 0; i < normalized.size(); ++i) {
    frequencies[i] = kTwoPi * 1e6 * request.detunings_mhz[i];
    counts[i] = normalized[i] * reference; // absolute counts per shot
  }

  try {
    const GaussianDipFit fit = fit_gaussian_dip(frequencies, counts);
    row.converged = fit.converged;
    row.contrast = fit.contrast;
    row.second = fit.fwhm() / (kTwoPi * 1e6);
    if (!fit.converged) {
      row.note = "dip fit did not converge";
      return row;
    }
    row.eta = eta_podmr(fit, report_params(config,
                                           payload_duration(request.pulse)));
  } catch (const std::exception& e) {
    row.converged = false;
    row.note = e.what();
  }
  return row;
}

SensitivityRow detuning_row(const EvalRequest& request,
                            const EvalResponse& response,
                            const SimulatorConfig& config) {
  SensitivityRow row;
  row.x = request.carrier_detuning_mhz;
  if (!response.raw || response.raw->normalized.empty()) {
    row.note = "record carries no raw fringe";
    return row;
  }
  const std::vector<double>& normalized = response.raw->normalized;
  const std::vector<double>& delays_ns = response.raw->delays_ns;
  if (normalized.size() != delays_ns.size()) {
    row.note = "raw fringe is inconsistent";
    return row;
  }

  std::vector<double> delays(delays_ns.size());
  for (std::size_t i = 0; i < delays_ns.size(); ++i) {
    delays[i] = seconds_from_ns(delays_ns[i]);
  }

  // Expected fringe frequencies: carrier detuning shifted by each hyperfine
  // line, folded to positive, de-duplicated, sub-kHz lines dropped.
  const double carrier_hz = request.carrier_detuning_mhz * 1e6;
  std::vector<double> priors;
  for (const double offset : config.model.hyperfine.offsets) {
    const double prior = std::abs(carrier_hz + offset / kTwoPi);
    if (prior < 1e3) continue;
    bool duplicate = false;
    for (const double seen : priors) {
      if (std::abs(seen - prior) <= 1e-6 * std::max(seen, prior)) {
        duplicate = true;
        break;
      }
    }
    if (!duplicate) priors.push_back(prior);
  }
  std::sort(priors.begin(), priors.end());
  if (priors.size() > 3) priors.resize(3);
  if (priors.empty()) {
    row.note = "no resolvable fringe frequency at this detuning";
    return row;
  }

  try {
    const RamseyFit fit = fit_ramsey(delays, normalized, priors,
                                     config.model.hyperfine.decay_order);
    row.converged = fit.converged;
    row.contrast = fit.contrast;
    row.second = fit.t2_star * 1e6;
    if (!fit.converged) {
      row.note = "fringe fit did not converge";
      return row;
    }
    const SensitivityParams p = report_params(config, 0.0);
    row.eta = eta_ramsey(fit, p, 0.5 * fit.t2_star);
  } catch (const std::exception& e) {
    row.converged = false;
    row.note = e.what();
  }
  return row;
}

} // namespace

SensitivityReport build_sensitivity_report(const std::string& log_path) {
  SensitivityReport report;
  std::optional<SimulatorConfig> config;

  for (const std::string& line : read_complete_lines(log_path)) {
    const std::string type = log_record_type(line);
    if (type == "meta") {
      const LogMeta meta = parse_log_meta(line);
      config = parse_simulator_config(meta.config_json);
      report.kind = meta.run_kind;
    } else if (type == "eval") {
      if (!config) {
        throw LogError("scan log has data before its header record");
      }
      const LogEval eval = parse_log_eval(line);
      const EvalRequest request = parse_request(eval.request_line);
      const EvalResponse response = parse_response(eval.response_line);
      if (request.kind == EvalKind::Spectrum) {
        report.rows.push_back(amplitude_row(request, response, *config));
      } else if (request.kind == EvalKind::Fringe) {
        report.rows.push_back(detuning_row(request, response, *config));
      }
    }
  }

  if (!config) throw LogError("log holds no header record");
  if (report.rows.empty()) throw LogError("log holds no scan records");
  return report;
}

std::string format_sensitivity_report(const SensitivityReport& report) {
  const bool amplitude = report.kind == "amplitude-scan";
  std::ostringstream out;
  out << "# sensitivity report v1\n";
  out << "# run: " << report.kind << "\n";
  out << (amplitude
              ? "# columns: scale contrast fwhm_mhz eta_t_per_sqrt_hz status\n"
              : "# columns: detuning_mhz contrast t2_star_us "
                "eta_t_per_sqrt_hz status\n");
  for (const SensitivityRow& row : report.rows) {
    const bool usable = row.note.empty() && row.converged;
    out << fmt(row.x) << ' ' << fmt(row.contrast) << ' ' << fmt(row.second)
        << ' ' << fmt(usable ? row.eta : std::nan("")) << ' '
        << (usable ? "ok" : "fit-failed") << '\n';
    if (!usable && !row.note.empty()) {
      out << "# note: " << row.note << '\n';
    }
  }
  return out.str();
}

void write_sensitivity_report(const SensitivityReport& report,
                              const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw LogError("cannot open report file '" + path + "'");
  out << format_sensitivity_report(report);
  out.flush();
  if (!out) throw LogError("write to report file '" + path + "' failed");
}

// ---------------------------------------------------------------------------
// Replay
// ---------------------------------------------------------------------------

namespace {

std::uint64_t request_id_of(const std::string& request_line) {
  const json j = json::parse(request_line, nullptr, false);
  if (j.is_discarded() || !j.is_object() || !j.contains("id") ||
      !j["id"].is_number_unsigned()) {
    return 0;
  }
  return j["id"].get<std::uint64_t>();
}

// Server-side wall time is the one legitimately run-dependent response
// field; everything else must reproduce bit for bit.
std::string strip_timing(const std::string& response_line) {
  json j = json::parse(response_line, nullptr, false);
  if (j.is_discarded() || !j.is_object()) return response_line;
  j.erase("seconds");
  return j.dump();
}

std::vector<LogEval> eval_records(const std::string& log_path) {
  std::vector<LogEval> records;
  for (const std::string& line : read_complete_lines(log_path)) {
    if (log_record_type(line) == "eval") {
      records.push_back(parse_log_eval(line));
    }
  }
  return records;
}

} // namespace

ReplayOutcome replay_run(const RunManifest& manifest,
                         const std::string& scratch_dir,
                         const std::string& original_log_path) {
  const std::string original_log =
      original_log_path.empty() ? manifest.log_path : original_log_path;
  if (original_log.empty()) {
    throw LogError("manifest names no log to replay against");
  }

  const SimulatorConfig config = parse_simulator_config(manifest.config_json);
  const EvalService service(config, manifest.master_seed);
  LoopbackTransport loopback(service);

  const std::string replay_log = scratch_dir + "/replay-log.jsonl";
  const std::string replay_manifest = scratch_dir + "/replay-manifest.json";
  const std::string replay_pulse = scratch_dir + "/replay-pulse.txt";
  std::remove(replay_log.c_str());

  ReplayOutcome out;
  out.original_fom = manifest.best_fom;
  std::uint64_t tail_first_id = 1;

  if (manifest.run_kind == "step1") {
    Step1Options options = parse_step1_options(manifest.optimizer_json);
    options.master_seed = manifest.master_seed;
    tail_first_id = options.first_request_id;
    const Step1Result r =
        run_step1(loopback, config, options, replay_log, replay_manifest);
    out.replayed_fom = r.manifest.best_fom;
  } else if (manifest.run_kind == "step2-podmr" ||
             manifest.run_kind == "step2-gate") {
    Step2Options options = parse_step2_options(manifest.optimizer_json);
    options.master_seed = manifest.master_seed;
    tail_first_id = options.first_request_id;
    const Step2Result r = run_step2(loopback, config, options, replay_log,
                                    replay_manifest, replay_pulse);
    out.replayed_fom = r.manifest.best_fom;
  } else {
    throw LogError("run kind '" + manifest.run_kind +
                   "' cannot be replayed");
  }

  out.fom_match = bit_equal(out.original_fom, out.replayed_fom);

  // The original log may hold superseded attempts of the same ids (a resumed
  // run re-issues the interrupted superiteration); the final attempt wins.
  std::map<std::uint64_t, LogEval> original;
  for (const LogEval& record : eval_records(original_log)) {
    const std::uint64_t id = request_id_of(record.request_line);
    if (id >= tail_first_id) original[id] = record;
  }

  const std::vector<LogEval> replayed = eval_records(replay_log);
  out.compared = replayed.size();
  out.sequence_match = true;
  for (const LogEval& record : replayed) {
    const std::uint64_t id = request_id_of(record.request_line);
    const auto it = original.find(id);
    if (it == original.end()) {
      out.sequence_match = false;
      out.detail = "original log lacks evaluation id " + std::to_string(id);
      break;
    }
    if (it->second.request_line != record.request_line) {
      out.sequence_match = false;
      out.detail = "request id " + std::to_string(id) + " differs";
      break;
    }
    if (strip_timing(it->second.response_line) !=
        strip_timing(record.response_line)) {
      out.sequence_match = false;
      out.detail = "response id " + std::to_string(id) + " differs";
      break;
    }
  }
  if (out.sequence_match && original.size() != replayed.size()) {
    out.sequence_match = false;
    out.detail = "original log holds " + std::to_string(original.size()) +
                 " evaluations, replay produced " +
                 std::to_string(replayed.size());
  }
  if (out.detail.empty() && !out.fom_match) {
    out.detail = "final objective differs: " + fmt(out.original_fom) +
                 " vs " + fmt(out.replayed_fom);
  }
  return out;
}

ReplayOutcome replay_run_from_file(const std::string& manifest_path,
                                   const std::string& scratch_dir) {
  return replay_run(load_manifest(manifest_path), scratch_dir);
}

} // namespace nvqoc
