#include "nvqoc/sequences.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <stdexcept>

#include "nvqoc/quadrature.hpp"
#include "nvqoc/rng.hpp"
#include "nvqoc/units.hpp"

namespace nvqoc {

namespace {

double poisson_total(double mean, std::mt19937_64& rng) {
  std::poisson_distribution<std::uint64_t> dist(mean);
  return static_cast<double>(dist(rng));
}

// Seed tied to the point's coordinate so draws do not depend on evaluation
// order or on which sub-grid the point appears in.
std::uint64_t point_seed(std::uint64_t base, double coordinate) {
  return derive_seed(base, std::bit_cast<std::uint64_t>(coordinate));
}

// Transfer probabilities of the two interleaved branches as functions of the
// environment detuning offset (hyperfine line + quasi-static draw).
struct BranchTransfers {
  std::function<double(double)> first;
  std::function<double(double)> second;
};

struct BranchCounts {
  double first = 0.0;
  double second = 0.0;
};

// Quadrature sums of probabilities can overshoot [0, 1] by rounding.
double clamp_probability(double t) { return std::clamp(t, 0.0, 1.0); }

BranchCounts measure_branches(const ReadoutKernel& kernel,
                              const SequenceContext& ctx,
                              const BranchTransfers& transfers,
                              std::uint64_t seed) {
  if (ctx.shots.repetitions == 0 || ctx.shots.shots_per_repetition == 0) {
    throw std::invalid_argument("sequence: zero repetitions or shots");
  }
  const double shots = ctx.shots.shots_per_repetition;
  std::mt19937_64 rng = make_rng(seed);

  if (ctx.sampling == DephasingSampling::PerRepetition) {
    if (ctx.noiseless) {
      throw std::invalid_argument(
          "sequence: per-repetition dephasing draws require noisy mode");
    }
    DetuningSampler sampler(ctx.nv.hyperfine);
    BranchCounts out;
    for (std::uint32_t r = 0; r < ctx.shots.repetitions; ++r) {
      const double delta = sampler(rng);
      const WindowMeans means =
          kernel.prepared_means(clamp_probability(transfers.first(delta)),
                                clamp_probability(transfers.second(delta)));
      out.first += poisson_total(shots * means.readout_first, rng);
      out.second += poisson_total(shots * means.readout_second, rng);
    }
    return out;
  }

  const double t_first = clamp_probability(averaged_transfer(
      ctx.nv.hyperfine, ctx.quadrature_nodes, transfers.first));
  const double t_second = clamp_probability(averaged_transfer(
      ctx.nv.hyperfine, ctx.quadrature_nodes, transfers.second));
  const WindowMeans means = kernel.prepared_means(t_first, t_second);
  BranchCounts out;
  out.first = ctx.shots.repetitions * shots * means.readout_first;
  out.second = ctx.shots.repetitions * shots * means.readout_second;
  if (!ctx.noiseless) {
    out.first = poisson_total(out.first, rng);
    out.second = poisson_total(out.second, rng);
  }
  return out;
}

double branch_contrast(const BranchCounts& counts) {
  const double sum = counts.first + counts.second;
  if (!(sum > 0.0)) {
    throw std::runtime_error("sequence: zero total readout counts");
  }
  return (counts.first - counts.second) / sum;
}

// Delta-method variance of (A - B)/(A + B) for independent Poisson totals.
double contrast_variance(const BranchCounts& counts) {
  const double sum = counts.first + counts.second;
  if (!(sum > 0.0)) return 0.0;
  return 4.0 * counts.first * counts.second / (sum * sum * sum);
}

SequenceResult run_scan(const AmplitudeScan& scan, const SequenceContext& ctx,
                        const std::function<BranchTransfers(double)>& branches,
                        std::uint64_t seed) {
  scan.validate();
  ctx.nv.hyperfine.validate();
  const ReadoutKernel kernel(ctx.nv.rates, ctx.readout);

  SequenceResult result;
  result.scales = scan.scales;
  double contrast_sum = 0.0;
  double variance_sum = 0.0;
  for (const double scale : scan.scales) {
    const BranchCounts counts =
        measure_branches(kernel, ctx, branches(scale), point_seed(seed, scale));
    result.counts_first.push_back(counts.first);
    result.counts_second.push_back(counts.second);
    const double c = branch_contrast(counts);
    result.contrast.push_back(c);
    contrast_sum += c;
    variance_sum += contrast_variance(counts);
  }
  const double n = static_cast<double>(scan.scales.size());
  result.fom = 1.0 - contrast_sum / n;
  result.fom_std_error = std::sqrt(variance_sum) / n;
  return result;
}

void validate_pulse(const ControlPulse& pulse) {
  if (pulse.samples.empty() || !(pulse.dt > 0.0) || !pulse.finite()) {
    throw std::invalid_argument("sequence: pulse must be nonempty and finite");
  }
}

} // namespace

AmplitudeScan AmplitudeScan::uniform(int n) {
  if (n < 1) {
    throw std::invalid_argument("AmplitudeScan: need at least one scale");
  }
  AmplitudeScan scan;
  scan.scales.reserve(n);
  for (int k = 1; k <= n; ++k) {
    scan.scales.push_back(static_cast<double>(k) / static_cast<double>(n));
  }
  return scan;
}

void AmplitudeScan::validate() const {
  if (scales.empty()) {
    throw std::invalid_argument("AmplitudeScan: empty scale list");
  }
  double previous = 0.0;
  for (const double s : scales) {
    if (!(s > previous) || !(s <= 1.0)) {
      throw std::invalid_argument(
          "AmplitudeScan: scales must be strictly ascending within (0, 1]");
    }
    previous = s;
  }
}

DetuningSampler::DetuningSampler(const HyperfineModel& hyperfine) {
  hyperfine.validate();
  offsets_ = hyperfine.offsets;
  line_ = std::discrete_distribution<int>(hyperfine.weights.begin(),
                                          hyperfine.weights.end());
  decay_order_ = hyperfine.decay_order;
  sigma_ = decay_order_ == 2.0 ? hyperfine.detuning_sigma()
                               : 1.0 / hyperfine.t2_star;
}

double DetuningSampler::operator()(std::mt19937_64& rng) {
  const double base = offsets_[static_cast<std::size_t>(line_(rng))];
  if (decay_order_ == 2.0) {
    return base + std::normal_distribution<double>(0.0, sigma_)(rng);
  }
  return base + std::cauchy_distribution<double>(0.0, sigma_)(rng);
}

double averaged_transfer(const HyperfineModel& hyperfine, int quadrature_nodes,
                         const std::function<double(double)>& transfer_at) {
  hyperfine.validate();
  if (quadrature_nodes < 1) {
    throw std::invalid_argument("averaged_transfer: need at least one node");
  }
  double total = 0.0;
  if (hyperfine.decay_order == 2.0) {
    // E[f] over N(0, sigma^2) via Gauss-Hermite: (1/sqrt(pi)) sum w f(sqrt(2) sigma x).
    const QuadratureRule rule = gauss_hermite(quadrature_nodes);
    const double step = kSqrt2 * hyperfine.detuning_sigma();
    const double norm = 1.0 / std::sqrt(kPi);
    for (std::size_t i = 0; i < hyperfine.offsets.size(); ++i) {
      double line_sum = 0.0;
      for (std::size_t q = 0; q < rule.nodes.size(); ++q) {
        line_sum += rule.weights[q] *
                    transfer_at(hyperfine.offsets[i] + step * rule.nodes[q]);
      }
      total += hyperfine.weights[i] * norm * line_sum;
    }
  } else {
    // Cauchy expectation through delta = gamma tan(pi u / 2) on u in (-1, 1).
    const QuadratureRule rule = gauss_legendre(quadrature_nodes);
    const double gamma = 1.0 / hyperfine.t2_star;
    for (std::size_t i = 0; i < hyperfine.offsets.size(); ++i) {
      double line_sum = 0.0;
      for (std::size_t q = 0; q < rule.nodes.size(); ++q) {
        const double delta = gamma * std::tan(0.5 * kPi * rule.nodes[q]);
        line_sum += rule.weights[q] * transfer_at(hyperfine.offsets[i] + delta);
      }
      total += hyperfine.weights[i] * 0.5 * line_sum;
    }
  }
  return total;
}

SequenceResult podmr_fom(const ControlPulse& pulse, const AmplitudeScan& scan,
                         const SequenceContext& ctx, std::uint64_t seed) {
  validate_pulse(pulse);
  return run_scan(
      scan, ctx,
      [&](double scale) {
        BranchTransfers transfers;
        transfers.first = [](double) { return 0.0; };
        transfers.second = [&, scale](double delta) {
          const RwaHamiltonianParams params{ctx.carrier_detuning + delta,
                                            ctx.nv.rabi_max};
          return transfer_probability(propagate(params, pulse, scale));
        };
        return transfers;
      },
      seed);
}

SequenceResult gate_verification_fom(const ControlPulse& pulse,
                                     const AmplitudeScan& scan,
                                     const ControlPulse& pi_reference,
                                     const SequenceContext& ctx,
                                     std::uint64_t seed) {
  validate_pulse(pulse);
  validate_pulse(pi_reference);
  return run_scan(
      scan, ctx,
      [&](double scale) {
        BranchTransfers transfers;
        // Echo branch: U pi_x U returns to |0> when U is an ideal pi/2; the
        // reference pi stays at full amplitude while U is miscalibrated.
        transfers.first = [&, scale](double delta) {
          const RwaHamiltonianParams params{ctx.carrier_detuning + delta,
                                            ctx.nv.rabi_max};
          const Unitary2 u = propagate(params, pulse, scale);
          const Unitary2 pi_x = propagate(params, pi_reference, 1.0);
          return transfer_probability(u * pi_x * u);
        };
        // Inversion branch: U U fully inverts when U is an ideal pi/2.
        transfers.second = [&, scale](double delta) {
          const RwaHamiltonianParams params{ctx.carrier_detuning + delta,
                                            ctx.nv.rabi_max};
          const Unitary2 u = propagate(params, pulse, scale);
          return transfer_probability(u * u);
        };
        return transfers;
      },
      seed);
}

SpectrumResult podmr_spectrum(const ControlPulse& pulse,
                              const AmplitudeScan& scan,
                              const std::vector<double>& detunings,
                              const SequenceContext& ctx, std::uint64_t seed) {
  validate_pulse(pulse);
  scan.validate();
  ctx.nv.hyperfine.validate();
  if (detunings.empty()) {
    throw std::invalid_argument("podmr_spectrum: empty detuning grid");
  }
  const ReadoutKernel kernel(ctx.nv.rates, ctx.readout);

  SpectrumResult result;
  result.detunings = detunings;
  result.scales = scan.scales;
  result.normalized.reserve(scan.scales.size());
  for (const double scale : scan.scales) {
    std::vector<double> row;
    row.reserve(detunings.size());
    for (const double carrier : detunings) {
      BranchTransfers transfers;
      transfers.first = [](double) { return 0.0; };
      transfers.second = [&, scale, carrier](double delta) {
        const RwaHamiltonianParams params{carrier + delta, ctx.nv.rabi_max};
        return transfer_probability(propagate(params, pulse, scale));
      };
      const BranchCounts counts = measure_branches(
          kernel, ctx, transfers, point_seed(point_seed(seed, scale), carrier));
      if (!(counts.first > 0.0)) {
        throw std::runtime_error("podmr_spectrum: zero reference counts");
      }
      row.push_back(counts.second / counts.first);
    }
    result.normalized.push_back(std::move(row));
  }
  return result;
}

RamseyResult ramsey_fringe(const ControlPulse& half_pulse,
                           const std::vector<double>& delays,
                           const SequenceContext& ctx, std::uint64_t seed,
                           double amplitude_scale) {
  validate_pulse(half_pulse);
  ctx.nv.hyperfine.validate();
  if (delays.empty()) {
    throw std::invalid_argument("ramsey_fringe: empty delay grid");
  }
  for (const double tau : delays) {
    if (!(tau >= 0.0)) {
      throw std::invalid_argument("ramsey_fringe: negative delay");
    }
  }
  const ReadoutKernel kernel(ctx.nv.rates, ctx.readout);

  RamseyResult result;
  result.delays = delays;
  for (const double tau : delays) {
    BranchTransfers transfers;
    transfers.first = [](double) { return 0.0; };
    transfers.second = [&, tau](double delta) {
      const double detuning = ctx.carrier_detuning + delta;
      const RwaHamiltonianParams params{detuning, ctx.nv.rabi_max};
      const Unitary2 u = propagate(params, half_pulse, amplitude_scale);
      return transfer_probability(u * free_evolution(detuning, tau) * u);
    };
    const BranchCounts counts =
        measure_branches(kernel, ctx, transfers, point_seed(seed, tau));
    if (!(counts.first > 0.0)) {
      throw std::runtime_error("ramsey_fringe: zero reference counts");
    }
    result.counts_baseline.push_back(counts.first);
    result.counts_signal.push_back(counts.second);
    result.normalized.push_back(counts.second / counts.first);
  }
  return result;
}

} // namespace nvqoc
