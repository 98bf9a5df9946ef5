// Command-line driver for the closed-loop toolkit: stand up the measurement
// server, run the two optimization steps against it (or fully in-process),
// scan the optimized pulses, build sensitivity reports, and replay finished
// runs from their manifests.

#include <CLI11.hpp>

#include <csignal>
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "nvqoc/eval_service.hpp"
#include "nvqoc/loop_runner.hpp"
#include "nvqoc/run_log.hpp"
#include "nvqoc/sim_config.hpp"
#include "nvqoc/transport.hpp"

namespace {

using namespace nvqoc;

TcpServer* g_server = nullptr;

void handle_signal(int) {
  if (g_server != nullptr) g_server->stop();
}

// "a,b,c" as explicit values or "start:stop:count" as a uniform grid.
std::vector<double> parse_grid(const std::string& text) {
  std::vector<double> values;
  if (text.find(':') != std::string::npos) {
    double start = 0.0;
    double stop = 0.0;
    int count = 0;
    char c1 = 0;
    char c2 = 0;
    std::istringstream in(text);
    if (!(in >> start >> c1 >> stop >> c2 >> count) || c1 != ':' ||
        c2 != ':' || count < 1) {
      throw CLI::ValidationError("grid", "expected start:stop:count");
    }
    values.resize(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) {
      values[static_cast<std::size_t>(i)] =
          count == 1 ? start : start + (stop - start) * i / (count - 1);
    }
    return values;
  }
  std::istringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    if (item.empty()) continue;
    values.push_back(std::stod(item));
  }
  if (values.empty()) {
    throw CLI::ValidationError("grid", "no values in '" + text + "'");
  }
  return values;
}

// Split a total shot count into repetitions x shots-per-repetition.
std::optional<ShotBudget> budget_from_total(std::uint64_t total) {
  if (total == 0) return std::nullopt; // server defaults
  ShotBudget budget;
  const std::uint64_t per =
      std::min<std::uint64_t>(200, std::max<std::uint64_t>(1, total / 2));
  const std::uint64_t reps =
      std::max<std::uint64_t>(2, (total + per - 1) / per);
  budget.shots_per_repetition = static_cast<std::uint32_t>(per);
  budget.repetitions = static_cast<std::uint32_t>(reps);
  return budget;
}

SimulatorConfig load_config(const std::string& path, bool noiseless_override) {
  SimulatorConfig config =
      path.empty() ? SimulatorConfig{} : load_simulator_config(path);
  if (noiseless_override) config.noiseless = true;
  return canonical_simulator_config(config);
}

// Either a TCP connection to a remote server or a private in-process
// service; the held service keeps the loopback transport alive.
struct Session {
  std::unique_ptr<EvalService> service;
  std::unique_ptr<RequestTransport> transport;
};

Session make_session(const std::string& endpoint,
                     const SimulatorConfig& config, std::uint64_t seed) {
  Session session;
  if (endpoint.empty()) {
    session.service = std::make_unique<EvalService>(config, seed);
    session.transport = std::make_unique<LoopbackTransport>(*session.service);
    return session;
  }
  const std::size_t colon = endpoint.rfind(':');
  if (colon == std::string::npos) {
    throw CLI::ValidationError("--endpoint", "expected host:port");
  }
  session.transport = std::make_unique<TcpClient>(
      endpoint.substr(0, colon), std::stoi(endpoint.substr(colon + 1)));
  return session;
}

ProgressFn make_progress(bool quiet) {
  if (quiet) return {};
  return [](const std::string& line) { std::cout << line << "\n"; };
}

std::string default_scratch() {
  return std::filesystem::temp_directory_path().string();
}

} // namespace

int main(int argc, char** argv) {
  CLI::App app{"Closed-loop spin-magnetometry optimization driver"};
  app.require_subcommand(1);

  // Shared flags, duplicated per subcommand for independent defaults.
  struct Common {
    std::string config_path;
    std::string endpoint;
    std::uint64_t seed = 1;
    std::uint64_t shots_total = 0;
    bool noiseless = false;
    bool quiet = false;

    void attach(CLI::App* cmd, bool with_endpoint = true) {
      cmd->add_option("--config", config_path,
                      "Configuration file (defaults when omitted)");
      if (with_endpoint) {
        cmd->add_option("--endpoint", endpoint,
                        "host:port of a running server (in-process otherwise)");
      }
      cmd->add_option("--seed", seed, "Master seed for derived measurements");
      cmd->add_option("--shots", shots_total,
                      "Total shots per evaluation (0 = server default)");
      cmd->add_flag("--noiseless", noiseless,
                    "Override the configuration to noiseless mode");
      cmd->add_flag("--quiet", quiet, "Suppress progress output");
    }
  };

  // serve ------------------------------------------------------------------
  auto* serve = app.add_subcommand("serve", "Run the measurement server");
  std::string serve_config;
  std::string serve_host = "127.0.0.1";
  int serve_port = 42690;
  std::uint64_t serve_seed = 1;
  bool serve_noiseless = false;
  serve->add_option("--config", serve_config, "Configuration file");
  serve->add_option("--host", serve_host, "Bind address");
  serve->add_option("--port", serve_port, "Port (0 = ephemeral)");
  serve->add_option("--seed", serve_seed, "Master seed");
  serve->add_flag("--noiseless", serve_noiseless, "Noiseless mode");

  // step1 ------------------------------------------------------------------
  auto* step1 = app.add_subcommand(
      "step1", "Optimize the optical readout parameters");
  Common c1;
  c1.attach(step1);
  std::string s1_log = "step1-log.jsonl";
  std::string s1_manifest = "step1-manifest.json";
  std::string s1_guess;
  int s1_max_evals = 400;
  double s1_tol = 1e-3;
  bool s1_resume = false;
  step1->add_option("--log", s1_log, "Evaluation log (appended)");
  step1->add_option("--manifest", s1_manifest, "Run manifest");
  step1->add_option("--guess", s1_guess,
                    "Initial point: power_mw,duration_ns,window_ns,wait_ns");
  step1->add_option("--max-evals", s1_max_evals, "Evaluation budget");
  step1->add_option("--tol", s1_tol, "Simplex spread tolerance");
  step1->add_flag("--resume", s1_resume, "Continue from the manifest");

  // step2 ------------------------------------------------------------------
  auto* step2 =
      app.add_subcommand("step2", "Optimize an amplitude-robust pulse");
  Common c2;
  c2.attach(step2);
  std::string s2_kind = "podmr";
  std::string s2_log = "step2-log.jsonl";
  std::string s2_manifest = "step2-manifest.json";
  std::string s2_pulse = "step2-pulse.txt";
  std::string s2_scales;
  int s2_superiterations = 10;
  int s2_n_set = 4;
  int s2_max_evals = 400;
  double s2_tol_super = 1e-3;
  double s2_duration_factor = 3.0;
  int s2_samples = 120;
  std::int64_t s2_basis_seed = -1;
  bool s2_resume = false;
  step2->add_option("--kind", s2_kind, "podmr (pi pulse) or gate (pi/2)");
  step2->add_option("--log", s2_log, "Evaluation log (appended)");
  step2->add_option("--manifest", s2_manifest, "Run manifest");
  step2->add_option("--pulse", s2_pulse, "Optimized pulse output file");
  step2->add_option("--scales", s2_scales,
                    "Amplitude scales, csv or start:stop:count");
  step2->add_option("--superiterations", s2_superiterations,
                    "Basis redraw rounds");
  step2->add_option("--n-set", s2_n_set, "Superparameters per channel");
  step2->add_option("--max-evals", s2_max_evals,
                    "Simplex budget per superiteration");
  step2->add_option("--tol-super", s2_tol_super,
                    "Stop when a round improves less than this");
  step2->add_option("--duration-factor", s2_duration_factor,
                    "Initial square pulse stretch factor");
  step2->add_option("--samples", s2_samples, "Waveform samples");
  step2->add_option("--basis-seed", s2_basis_seed,
                    "Basis draw seed (-1 = master seed)");
  step2->add_flag("--resume", s2_resume, "Continue from the manifest");

  // scan -------------------------------------------------------------------
  auto* scan = app.add_subcommand(
      "scan", "Measure spectra or fringes with a stored pulse");
  Common cs;
  cs.attach(scan);
  std::string scan_kind = "amplitude";
  std::string scan_pulse;
  std::string scan_log = "scan-log.jsonl";
  std::string scan_scales = "0.2,0.4,0.6,0.8,1.0";
  std::string scan_detunings = "-8:8:41";
  std::string scan_delays = "0:4000:161";
  double scan_amplitude_scale = 1.0;
  scan->add_option("--kind", scan_kind, "amplitude or detuning");
  scan->add_option("--pulse", scan_pulse, "Pulse file to play")->required();
  scan->add_option("--log", scan_log, "Scan log (appended)");
  scan->add_option("--scales", scan_scales, "Drive scales (amplitude scan)");
  scan->add_option("--detunings-mhz", scan_detunings,
                   "Carrier detunings in MHz, csv or start:stop:count");
  scan->add_option("--delays-ns", scan_delays,
                   "Free-evolution delays in ns (detuning scan)");
  scan->add_option("--amplitude-scale", scan_amplitude_scale,
                   "Drive miscalibration factor (detuning scan)");

  // report -----------------------------------------------------------------
  auto* report =
      app.add_subcommand("report", "Fit a scan log into a sensitivity table");
  std::string report_log;
  std::string report_out;
  report->add_option("--log", report_log, "Scan log to fit")->required();
  report->add_option("--out", report_out, "Output file (stdout otherwise)");

  // replay -----------------------------------------------------------------
  auto* replay =
      app.add_subcommand("replay", "Re-run a manifest and verify the log");
  std::string replay_manifest;
  std::string replay_scratch;
  replay->add_option("--manifest", replay_manifest, "Run manifest")
      ->required();
  replay->add_option("--scratch", replay_scratch,
                     "Directory for replay artifacts (temp dir otherwise)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (serve->parsed()) {
      const SimulatorConfig config = load_config(serve_config, serve_noiseless);
      const EvalService service(config, serve_seed);
      TcpServer server(service, serve_host, serve_port);
      g_server = &server;
      std::signal(SIGINT, handle_signal);
      std::signal(SIGTERM, handle_signal);
      std::cout << "listening on " << serve_host << ":" << server.port()
                << std::endl;
      server.run();
      std::cout << "stopped" << std::endl;
      return 0;
    }

    if (step1->parsed()) {
      Step1Options options;
      SimulatorConfig config;
      if (s1_resume) {
        const RunManifest previous = load_manifest(s1_manifest);
        if (previous.finished()) {
          std::cout << "run already finished, nothing to resume\n";
          return 0;
        }
        config = parse_simulator_config(previous.config_json);
        options = parse_step1_options(previous.optimizer_json);
        options.master_seed = previous.master_seed;
        options.first_request_id = previous.next_request_id;
        if (!previous.best_parameters.empty()) {
          options.initial_guess = previous.best_parameters;
        }
        s1_log = previous.log_path.empty() ? s1_log : previous.log_path;
      } else {
        config = load_config(c1.config_path, c1.noiseless);
        options.master_seed = c1.seed;
        options.shots = budget_from_total(c1.shots_total);
        options.simplex.max_evaluations = s1_max_evals;
        options.simplex.tol_f = s1_tol;
        if (!s1_guess.empty()) options.initial_guess = parse_grid(s1_guess);
      }
      Session session = make_session(c1.endpoint, config, options.master_seed);
      const Step1Result result =
          run_step1(*session.transport, config, options, s1_log, s1_manifest,
                    make_progress(c1.quiet));
      const std::vector<double>& p = result.state.best_point;
      std::cout << "best fom " << result.state.best_fom << "\n";
      if (p.size() == 4) {
        std::cout << "laser_power_mw " << p[0] << "\nlaser_duration_ns "
                  << p[1] << "\nreadout_window_ns " << p[2]
                  << "\nwait_duration_ns " << p[3] << "\n";
      }
      std::cout << "manifest " << s1_manifest << "\n";
      return result.state.aborted ? 1 : 0;
    }

    if (step2->parsed()) {
      Step2Options options;
      SimulatorConfig config;
      if (s2_resume) {
        const RunManifest previous = load_manifest(s2_manifest);
        if (previous.finished()) {
          std::cout << "run already finished, nothing to resume\n";
          return 0;
        }
        config = parse_simulator_config(previous.config_json);
        options = parse_step2_options(previous.optimizer_json);
        options.master_seed = previous.master_seed;
        options.first_request_id = previous.next_request_id;
        if (previous.next_superiteration > 0) {
          options.resume_superiteration = previous.next_superiteration;
          ControlPulse carried;
          carried.dt = previous.checkpoint_dt;
          carried.samples.resize(previous.checkpoint_i.size());
          for (std::size_t k = 0; k < carried.samples.size(); ++k) {
            carried.samples[k] =
                IqSample{previous.checkpoint_i[k], previous.checkpoint_q[k]};
          }
          options.resume_raw = carried;
          options.resume_best_fom = previous.best_fom;
        }
        s2_log = previous.log_path.empty() ? s2_log : previous.log_path;
        s2_pulse = previous.pulse_path.empty() ? s2_pulse : previous.pulse_path;
      } else {
        config = load_config(c2.config_path, c2.noiseless);
        options.kind = step2_kind_from_string(s2_kind);
        options.master_seed = c2.seed;
        options.shots = budget_from_total(c2.shots_total);
        options.dcrab.n_set = s2_n_set;
        options.dcrab.max_superiterations = s2_superiterations;
        options.dcrab.simplex.max_evaluations = s2_max_evals;
        options.dcrab.tol_super = s2_tol_super;
        options.dcrab.seed = s2_basis_seed < 0
                                 ? c2.seed
                                 : static_cast<std::uint64_t>(s2_basis_seed);
        options.duration_factor = s2_duration_factor;
        options.samples = s2_samples;
        if (!s2_scales.empty()) options.scales = parse_grid(s2_scales);
      }
      Session session = make_session(c2.endpoint, config, options.master_seed);
      const Step2Result result =
          run_step2(*session.transport, config, options, s2_log, s2_manifest,
                    s2_pulse, make_progress(c2.quiet));
      std::cout << "best fom " << result.state.best_fom << "\n"
                << "pulse " << s2_pulse << "\n"
                << "manifest " << s2_manifest << "\n";
      return result.state.aborted ? 1 : 0;
    }

    if (scan->parsed()) {
      const SimulatorConfig config = load_config(cs.config_path, cs.noiseless);
      const ControlPulse pulse = load_pulse_file(scan_pulse);
      ScanOptions options;
      options.shots = budget_from_total(cs.shots_total);
      options.master_seed = cs.seed;
      Session session = make_session(cs.endpoint, config, cs.seed);
      if (scan_kind == "amplitude") {
        run_amplitude_scan(*session.transport, config, pulse,
                           parse_grid(scan_scales), parse_grid(scan_detunings),
                           options, scan_log, make_progress(cs.quiet));
      } else if (scan_kind == "detuning") {
        run_detuning_scan(*session.transport, config, pulse,
                          parse_grid(scan_detunings), parse_grid(scan_delays),
                          scan_amplitude_scale, options, scan_log,
                          make_progress(cs.quiet));
      } else {
        throw CLI::ValidationError("--kind", "expected amplitude or detuning");
      }
      std::cout << "scan log " << scan_log << "\n";
      return 0;
    }

    if (report->parsed()) {
      const SensitivityReport table = build_sensitivity_report(report_log);
      if (report_out.empty()) {
        std::cout << format_sensitivity_report(table);
      } else {
        write_sensitivity_report(table, report_out);
        std::cout << "report " << report_out << "\n";
      }
      return 0;
    }

    if (replay->parsed()) {
      const RunManifest manifest = load_manifest(replay_manifest);
      const std::string scratch =
          replay_scratch.empty() ? default_scratch() : replay_scratch;
      const ReplayOutcome outcome = replay_run(manifest, scratch);
      std::cout << "evaluations compared " << outcome.compared << "\n"
                << "final objective match "
                << (outcome.fom_match ? "yes" : "no") << "\n"
                << "evaluation sequence match "
                << (outcome.sequence_match ? "yes" : "no") << "\n";
      if (!outcome.detail.empty()) {
        std::cout << "detail: " << outcome.detail << "\n";
      }
      const bool ok = outcome.ok(manifest.noiseless);
      std::cout << (ok ? "replay verified" : "replay mismatch") << "\n";
      return ok ? 0 : 1;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
