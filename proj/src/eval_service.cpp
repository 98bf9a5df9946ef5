#include "nvqoc/eval_service.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

#include <json.hpp>

#include "nvqoc/rng.hpp"
#include "nvqoc/units.hpp"

namespace nvqoc {

namespace {

ReadoutCounts drop_repetition(const ReadoutCounts& counts, std::size_t r) {
  ReadoutCounts out = counts;
  out.readout_first.erase(out.readout_first.begin() + r);
  out.saturation_first.erase(out.saturation_first.begin() + r);
  out.readout_second.erase(out.readout_second.begin() + r);
  out.saturation_second.erase(out.saturation_second.begin() + r);
  return out;
}

// Leave-one-repetition-out estimate of the readout-FoM standard error.
double jackknife_fom_error(const ReadoutCounts& counts, double full_fom) {
  const std::size_t n = counts.repetitions();
  if (n < 3) return 0.0;
  std::vector<double> partial;
  partial.reserve(n);
  for (std::size_t r = 0; r < n; ++r) {
    try {
      partial.push_back(fom_readout(drop_repetition(counts, r)));
    } catch (const std::exception&) {
      return std::abs(full_fom); // degenerate counts: no sharper estimate
    }
  }
  const double mean =
      std::accumulate(partial.begin(), partial.end(), 0.0) / partial.size();
  double ss = 0.0;
  for (const double v : partial) ss += (v - mean) * (v - mean);
  return std::sqrt(ss * (static_cast<double>(n) - 1.0) / static_cast<double>(n));
}

std::uint64_t peek_id(const std::string& line) {
  const auto obj = nlohmann::json::parse(line, nullptr, false);
  if (obj.is_object()) {
    const auto it = obj.find("id");
    if (it != obj.end() && it->is_number_unsigned())
      return it->get<std::uint64_t>();
  }
  return 0;
}

} // namespace

EvalService::EvalService(SimulatorConfig config, std::uint64_t master_seed)
    : config_(canonical_simulator_config(config)), master_seed_(master_seed) {
  config_.validate();
}

EvalResponse EvalService::evaluate(const EvalRequest& request) const {
  const auto start = std::chrono::steady_clock::now();
  const std::uint64_t seed = derive_seed(master_seed_, request.id);

  ReadoutSettings settings = config_.shots;
  if (request.shots) {
    settings.repetitions = request.shots->repetitions;
    settings.shots_per_repetition = request.shots->shots_per_repetition;
  }

  EvalResponse response;
  response.id = request.id;

  switch (request.kind) {
    case EvalKind::ReadoutParams: {
      ReadoutParams params;
      params.laser_power = request.laser_power_mw;
      params.laser_duration = seconds_from_ns(request.laser_duration_ns);
      params.readout_window = seconds_from_ns(request.readout_window_ns);
      params.wait_duration = seconds_from_ns(request.wait_duration_ns);
      if (config_.noiseless) {
        const WindowMeans means = expected_window_means(
            config_.model.rates, params, 0.0, settings.inversion_transfer);
        response.fom = fom_readout_from_means(means);
        response.std_error = 0.0;
        if (request.return_raw) {
          const double cycles = static_cast<double>(settings.repetitions) *
                                settings.shots_per_repetition;
          RawCounts raw;
          raw.readout_first = means.readout_first * cycles;
          raw.readout_second = means.readout_second * cycles;
          raw.saturation_first = means.saturation_first * cycles;
          raw.saturation_second = means.saturation_second * cycles;
          response.raw = raw;
        }
      } else {
        auto rng = make_rng(seed);
        const ReadoutCounts counts =
            simulate_readout(config_.model.rates, params, settings, rng);
        response.fom = fom_readout(counts);
        response.std_error = jackknife_fom_error(counts, response.fom);
        if (request.return_raw) {
          RawCounts raw;
          raw.readout_first = counts.total_readout_first();
          raw.readout_second = counts.total_readout_second();
          raw.saturation_first = counts.total_saturation_first();
          raw.saturation_second = counts.total_saturation_second();
          response.raw = raw;
        }
      }
      break;
    }

    case EvalKind::PodmrFom:
    case EvalKind::RamseyGateFom: {
      const ControlPulse pulse = to_pulse(request.pulse, config_.model.rabi_max);
      AmplitudeScan scan{request.scales};
      scan.validate();
      SequenceContext ctx = config_.sequence_context();
      ctx.shots = settings;
      ctx.carrier_detuning =
          angular_from_hz(request.carrier_detuning_mhz * 1e6);
      const SequenceResult result =
          request.kind == EvalKind::PodmrFom
              ? podmr_fom(pulse, scan, ctx, seed)
              : gate_verification_fom(
                    pulse, scan,
                    make_rectangular_pulse(config_.model.rabi_max,
                                           config_.model.pi_duration()),
                    ctx, seed);
      response.fom = result.fom;
      response.std_error = result.fom_std_error;
      if (request.return_raw) {
        RawCounts raw;
        raw.scales = result.scales;
        raw.counts_first = result.counts_first;
        raw.counts_second = result.counts_second;
        raw.contrast = result.contrast;
        response.raw = raw;
      }
      break;
    }

    case EvalKind::Spectrum: {
      const ControlPulse pulse = to_pulse(request.pulse, config_.model.rabi_max);
      AmplitudeScan scan{request.scales};
      scan.validate();
      SequenceContext ctx = config_.sequence_context();
      ctx.shots = settings;
      std::vector<double> detunings;
      detunings.reserve(request.detunings_mhz.size());
      for (const double mhz : request.detunings_mhz)
        detunings.push_back(angular_from_hz(mhz * 1e6));
      const SpectrumResult result =
          podmr_spectrum(pulse, scan, detunings, ctx, seed);
      double depth = std::numeric_limits<double>::infinity();
      for (const auto& row : result.normalized)
        for (const double v : row) depth = std::min(depth, v);
      response.fom = depth; // deepest normalized dip across the grid
      response.std_error = 0.0;
      if (request.return_raw) {
        RawCounts raw;
        raw.detunings_mhz = request.detunings_mhz;
        raw.scales = result.scales;
        raw.normalized_rows = result.normalized;
        // no-drive steady-state readout level, for absolute-rate conversions
        raw.mean_reference_counts =
            expected_window_means(config_.model.rates, config_.readout, 0.0, 0.0)
                .readout_first;
        response.raw = raw;
      }
      break;
    }

    case EvalKind::Fringe: {
      const ControlPulse pulse = to_pulse(request.pulse, config_.model.rabi_max);
      SequenceContext ctx = config_.sequence_context();
      ctx.shots = settings;
      ctx.carrier_detuning =
          angular_from_hz(request.carrier_detuning_mhz * 1e6);
      std::vector<double> delays;
      delays.reserve(request.delays_ns.size());
      for (const double ns : request.delays_ns)
        delays.push_back(seconds_from_ns(ns));
      const RamseyResult result =
          ramsey_fringe(pulse, delays, ctx, seed, request.amplitude_scale);
      response.fom =
          std::accumulate(result.normalized.begin(), result.normalized.end(),
                          0.0) /
          static_cast<double>(result.normalized.size());
      response.std_error = 0.0;
      if (request.return_raw) {
        RawCounts raw;
        raw.delays_ns = request.delays_ns;
        raw.normalized = result.normalized;
        response.raw = raw;
      }
      break;
    }
  }

  response.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
          .count();
  return response;
}

std::string EvalService::handle_line(const std::string& line) const {
  std::uint64_t id = 0;
  try {
    const EvalRequest request = parse_request(line);
    id = request.id;
    return encode(evaluate(request));
  } catch (const ProtocolError& e) {
    return encode(ErrorResponse{id == 0 ? peek_id(line) : id, e.field,
                                e.what()});
  } catch (const std::exception& e) {
    return encode(ErrorResponse{id == 0 ? peek_id(line) : id, "", e.what()});
  }
}

} // namespace nvqoc
