#include "nvqoc/sim_config.hpp"

#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "nvqoc/units.hpp"

namespace nvqoc {

using nlohmann::json;

namespace {

[[noreturn]] void bad(const std::string& field, const std::string& message) {
  throw std::invalid_argument("simulator config: " + field + " " + message);
}

void check_known_fields(const json& obj, const std::string& path,
                        std::initializer_list<const char*> known) {
  for (const auto& [key, value] : obj.items()) {
    bool ok = false;
    for (const char* k : known) ok = ok || key == k;
    if (!ok) bad(path + key, "is not a recognized field");
  }
}

double get_number(const json& obj, const char* field, const std::string& path,
                  double fallback) {
  const auto it = obj.find(field);
  if (it == obj.end()) return fallback;
  if (!it->is_number() || !std::isfinite(it->get<double>()))
    bad(path + field, "must be a finite number");
  return it->get<double>();
}

} // namespace

SequenceContext SimulatorConfig::sequence_context() const {
  SequenceContext ctx;
  ctx.nv = model;
  ctx.readout = readout;
  ctx.shots = shots;
  ctx.quadrature_nodes = quadrature_nodes;
  ctx.noiseless = noiseless;
  ctx.sampling = sampling;
  return ctx;
}

void SimulatorConfig::validate() const {
  model.hyperfine.validate();
  if (!(model.rabi_max > 0.0)) bad("model.rabi_max_mhz", "must be positive");
  if (!(model.resonance > 0.0)) bad("model.resonance_ghz", "must be positive");
  if (!(readout.laser_power > 0.0))
    bad("readout.laser_power_mw", "must be positive");
  if (!(readout.laser_duration > 0.0) || !(readout.readout_window > 0.0))
    bad("readout", "laser and window durations must be positive");
  if (readout.readout_window > readout.laser_duration)
    bad("readout.readout_window_ns", "cannot exceed laser_duration_ns");
  if (readout.wait_duration < 0.0)
    bad("readout.wait_duration_ns", "must be non-negative");
  if (shots.repetitions < 2)
    bad("shots.repetitions", "needs at least two repetitions");
  if (shots.shots_per_repetition < 1)
    bad("shots.shots_per_repetition", "must be at least one");
  if (quadrature_nodes < 1) bad("quadrature_nodes", "must be at least one");
}

SimulatorConfig parse_simulator_config(const std::string& text) {
  json obj = json::parse(text, nullptr, false);
  if (obj.is_discarded())
    bad("(document)", "is not valid structured text");
  if (!obj.is_object()) bad("(document)", "must be an object");
  check_known_fields(obj, "", {"model", "readout", "shots", "noiseless",
                               "sampling", "quadrature_nodes"});

  SimulatorConfig cfg;

  if (const auto m = obj.find("model"); m != obj.end()) {
    check_known_fields(*m, "model.",
                       {"resonance_ghz", "rabi_max_mhz", "hyperfine", "rates"});
    cfg.model.resonance = angular_from_hz(
        get_number(*m, "resonance_ghz", "model.",
                   hz_from_angular(cfg.model.resonance) / 1e9) *
        1e9);
    cfg.model.rabi_max = angular_from_hz(
        get_number(*m, "rabi_max_mhz", "model.",
                   hz_from_angular(cfg.model.rabi_max) / 1e6) *
        1e6);

    if (const auto h = m->find("hyperfine"); h != m->end()) {
      check_known_fields(*h, "model.hyperfine.",
                         {"offsets_mhz", "weights", "t2_star_us", "decay_order"});
      HyperfineModel& hf = cfg.model.hyperfine;
      if (const auto o = h->find("offsets_mhz"); o != h->end()) {
        if (!o->is_array() || o->empty())
          bad("model.hyperfine.offsets_mhz", "must be a non-empty array");
        hf.offsets.clear();
        for (const auto& e : *o) {
          if (!e.is_number())
            bad("model.hyperfine.offsets_mhz", "must hold numbers");
          hf.offsets.push_back(angular_from_hz(e.get<double>() * 1e6));
        }
        hf.weights.assign(hf.offsets.size(),
                          1.0 / static_cast<double>(hf.offsets.size()));
      }
      if (const auto w = h->find("weights"); w != h->end()) {
        if (!w->is_array() || w->size() != hf.offsets.size())
          bad("model.hyperfine.weights", "must match offsets_mhz in length");
        hf.weights.clear();
        for (const auto& e : *w) {
          if (!e.is_number() || e.get<double>() < 0.0)
            bad("model.hyperfine.weights", "must hold non-negative numbers");
          hf.weights.push_back(e.get<double>());
        }
        const double sum =
            std::accumulate(hf.weights.begin(), hf.weights.end(), 0.0);
        if (!(sum > 0.0)) bad("model.hyperfine.weights", "must not sum to zero");
        for (double& v : hf.weights) v /= sum;
      }
      hf.t2_star = seconds_from_ns(
          get_number(*h, "t2_star_us", "model.hyperfine.",
                     ns_from_seconds(hf.t2_star) / 1e3) *
          1e3);
      hf.decay_order =
          get_number(*h, "decay_order", "model.hyperfine.", hf.decay_order);
    }

    if (const auto r = m->find("rates"); r != m->end()) {
      check_known_fields(
          *r, "model.rates.",
          {"radiative_lifetime_ns", "isc_e1_lifetime_ns", "isc_e0_lifetime_ns",
           "metastable_lifetime_ns", "metastable_g0_fraction",
           "pump_saturated_lifetime_ns", "saturation_power_mw",
           "collection_efficiency", "background_kcps"});
      NvRates& rr = cfg.model.rates;
      const auto lifetime = [&](const char* field, double current_rate) {
        const double ns =
            get_number(*r, field, "model.rates.",
                       ns_from_seconds(1.0 / current_rate));
        if (!(ns > 0.0)) bad(std::string("model.rates.") + field,
                             "must be positive");
        return 1.0 / seconds_from_ns(ns);
      };
      rr.radiative = lifetime("radiative_lifetime_ns", rr.radiative);
      rr.isc_e1 = lifetime("isc_e1_lifetime_ns", rr.isc_e1);
      rr.isc_e0 = lifetime("isc_e0_lifetime_ns", rr.isc_e0);
      rr.metastable_decay =
          lifetime("metastable_lifetime_ns", rr.metastable_decay);
      rr.pump_max = lifetime("pump_saturated_lifetime_ns", rr.pump_max);
      rr.metastable_g0_fraction = get_number(
          *r, "metastable_g0_fraction", "model.rates.", rr.metastable_g0_fraction);
      if (rr.metastable_g0_fraction < 0.0 || rr.metastable_g0_fraction > 1.0)
        bad("model.rates.metastable_g0_fraction", "must lie in [0, 1]");
      rr.saturation_power = get_number(*r, "saturation_power_mw",
                                       "model.rates.", rr.saturation_power);
      if (!(rr.saturation_power > 0.0))
        bad("model.rates.saturation_power_mw", "must be positive");
      rr.collection_efficiency = get_number(
          *r, "collection_efficiency", "model.rates.", rr.collection_efficiency);
      if (rr.collection_efficiency <= 0.0 || rr.collection_efficiency > 1.0)
        bad("model.rates.collection_efficiency", "must lie in (0, 1]");
      rr.background_rate =
          get_number(*r, "background_kcps", "model.rates.",
                     rr.background_rate / 1e3) *
          1e3;
      if (rr.background_rate < 0.0)
        bad("model.rates.background_kcps", "must be non-negative");
    }
  }

  if (const auto ro = obj.find("readout"); ro != obj.end()) {
    check_known_fields(*ro, "readout.",
                       {"laser_power_mw", "laser_duration_ns",
                        "readout_window_ns", "wait_duration_ns"});
    cfg.readout.laser_power =
        get_number(*ro, "laser_power_mw", "readout.", cfg.readout.laser_power);
    cfg.readout.laser_duration = seconds_from_ns(get_number(
        *ro, "laser_duration_ns", "readout.",
        ns_from_seconds(cfg.readout.laser_duration)));
    cfg.readout.readout_window = seconds_from_ns(get_number(
        *ro, "readout_window_ns", "readout.",
        ns_from_seconds(cfg.readout.readout_window)));
    cfg.readout.wait_duration = seconds_from_ns(get_number(
        *ro, "wait_duration_ns", "readout.",
        ns_from_seconds(cfg.readout.wait_duration)));
  }

  if (const auto s = obj.find("shots"); s != obj.end()) {
    check_known_fields(*s, "shots.", {"repetitions", "shots_per_repetition"});
    const double reps =
        get_number(*s, "repetitions", "shots.", cfg.shots.repetitions);
    const double per = get_number(*s, "shots_per_repetition", "shots.",
                                  cfg.shots.shots_per_repetition);
    if (reps < 2 || reps != std::floor(reps))
      bad("shots.repetitions", "must be an integer of at least two");
    if (per < 1 || per != std::floor(per))
      bad("shots.shots_per_repetition", "must be a positive integer");
    cfg.shots.repetitions = static_cast<std::uint32_t>(reps);
    cfg.shots.shots_per_repetition = static_cast<std::uint32_t>(per);
  }

  if (const auto n = obj.find("noiseless"); n != obj.end()) {
    if (!n->is_boolean()) bad("noiseless", "must be a boolean");
    cfg.noiseless = n->get<bool>();
  }
  if (const auto s = obj.find("sampling"); s != obj.end()) {
    if (!s->is_string()) bad("sampling", "must be a string");
    const std::string v = s->get<std::string>();
    if (v == "expectation")
      cfg.sampling = DephasingSampling::Expectation;
    else if (v == "per-repetition")
      cfg.sampling = DephasingSampling::PerRepetition;
    else
      bad("sampling", "must be 'expectation' or 'per-repetition'");
  }
  if (const auto q = obj.find("quadrature_nodes"); q != obj.end()) {
    if (!q->is_number_integer() || q->get<int>() < 1)
      bad("quadrature_nodes", "must be a positive integer");
    cfg.quadrature_nodes = q->get<int>();
  }

  if (cfg.noiseless && cfg.sampling == DephasingSampling::PerRepetition)
    bad("sampling", "per-repetition draws require noiseless=false");

  cfg.validate();
  return cfg;
}

SimulatorConfig load_simulator_config(const std::string& path) {
  std::ifstream in(path);
  if (!in)
    throw std::runtime_error("simulator config: cannot open " + path);
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return parse_simulator_config(buffer.str());
}

std::string encode_simulator_config(const SimulatorConfig& config) {
  const NvRates& r = config.model.rates;
  json hyperfine{{"t2_star_us", ns_from_seconds(config.model.hyperfine.t2_star) / 1e3},
                 {"decay_order", config.model.hyperfine.decay_order},
                 {"weights", config.model.hyperfine.weights}};
  json offsets = json::array();
  for (const double w : config.model.hyperfine.offsets)
    offsets.push_back(hz_from_angular(w) / 1e6);
  hyperfine["offsets_mhz"] = offsets;

  return json{
      {"model",
       {{"resonance_ghz", hz_from_angular(config.model.resonance) / 1e9},
        {"rabi_max_mhz", hz_from_angular(config.model.rabi_max) / 1e6},
        {"hyperfine", hyperfine},
        {"rates",
         {{"radiative_lifetime_ns", ns_from_seconds(1.0 / r.radiative)},
          {"isc_e1_lifetime_ns", ns_from_seconds(1.0 / r.isc_e1)},
          {"isc_e0_lifetime_ns", ns_from_seconds(1.0 / r.isc_e0)},
          {"metastable_lifetime_ns", ns_from_seconds(1.0 / r.metastable_decay)},
          {"metastable_g0_fraction", r.metastable_g0_fraction},
          {"pump_saturated_lifetime_ns", ns_from_seconds(1.0 / r.pump_max)},
          {"saturation_power_mw", r.saturation_power},
          {"collection_efficiency", r.collection_efficiency},
          {"background_kcps", r.background_rate / 1e3}}}}},
      {"readout",
       {{"laser_power_mw", config.readout.laser_power},
        {"laser_duration_ns", ns_from_seconds(config.readout.laser_duration)},
        {"readout_window_ns", ns_from_seconds(config.readout.readout_window)},
        {"wait_duration_ns", ns_from_seconds(config.readout.wait_duration)}}},
      {"shots",
       {{"repetitions", config.shots.repetitions},
        {"shots_per_repetition", config.shots.shots_per_repetition}}},
      {"noiseless", config.noiseless},
      {"sampling", config.sampling == DephasingSampling::Expectation
                       ? "expectation"
                       : "per-repetition"},
      {"quadrature_nodes", config.quadrature_nodes}}
      .dump(2);
}

SimulatorConfig canonical_simulator_config(const SimulatorConfig& config) {
  // Each decimal field walks monotonically by at most one ulp per round trip
  // and settles within a few steps; a genuine cycle would throw below.
  std::string text = encode_simulator_config(config);
  for (int i = 0; i < 64; ++i) {
    SimulatorConfig parsed = parse_simulator_config(text);
    std::string again = encode_simulator_config(parsed);
    if (again == text) return parsed;
    text = std::move(again);
  }
  throw std::invalid_argument(
      "canonical_simulator_config: serialization did not settle");
}

} // namespace nvqoc
