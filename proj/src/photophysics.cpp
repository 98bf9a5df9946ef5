#include "nvqoc/photophysics.hpp"

#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include <unsupported/Eigen/MatrixFunctions>

namespace nvqoc {

namespace {

using Matrix6 = Eigen::Matrix<double, 6, 6>;
using Vector6 = Eigen::Matrix<double, 6, 1>;

void validate_populations(const Populations& p) {
  if (!p.allFinite() || p.minCoeff() < -1e-9 ||
      std::abs(p.sum() - 1.0) > 1e-6) {
    throw std::invalid_argument(
        "photophysics: populations must be nonnegative and sum to 1");
  }
}

// Rate generator augmented with a photon-counter row: the sixth component
// integrates collection_efficiency * radiative * (p_e0 + p_e1).
Matrix6 augmented_matrix(const NvRates& rates, bool laser_on,
                         double laser_power_mw) {
  Matrix6 a = Matrix6::Zero();
  a.topLeftCorner<5, 5>() = rate_matrix(rates, laser_on, laser_power_mw);
  a(5, kE0) = rates.collection_efficiency * rates.radiative;
  a(5, kE1) = rates.collection_efficiency * rates.radiative;
  return a;
}

struct SegmentPropagator {
  Matrix6 map;

  // (populations, photons) after the segment given populations before it.
  EvolutionResult apply(const Populations& p) const {
    Vector6 x = Vector6::Zero();
    x.head<5>() = p;
    const Vector6 y = map * x;
    return {y.head<5>(), y(5)};
  }
};

SegmentPropagator make_segment(const NvRates& rates, bool laser_on,
                               double laser_power_mw, double duration) {
  const Matrix6 gen = augmented_matrix(rates, laser_on, laser_power_mw);
  return {(gen * duration).exp()};
}

std::uint32_t poisson_draw(double mean, std::mt19937_64& rng) {
  std::poisson_distribution<std::uint32_t> dist(mean);
  return dist(rng);
}

double total(const std::vector<std::uint32_t>& v) {
  return static_cast<double>(
      std::accumulate(v.begin(), v.end(), std::uint64_t{0}));
}

} // namespace

Eigen::Matrix<double, 5, 5> rate_matrix(const NvRates& rates, bool laser_on,
                                        double laser_power_mw) {
  Eigen::Matrix<double, 5, 5> a = Eigen::Matrix<double, 5, 5>::Zero();
  auto add_rate = [&a](int from, int to, double rate) {
    a(to, from) += rate;
    a(from, from) -= rate;
  };
  if (laser_on) {
    const double pump = rates.pump_rate(laser_power_mw);
    add_rate(kG0, kE0, pump);
    add_rate(kG1, kE1, pump);
  }
  add_rate(kE0, kG0, rates.radiative);
  add_rate(kE1, kG1, rates.radiative);
  add_rate(kE0, kMeta, rates.isc_e0);
  add_rate(kE1, kMeta, rates.isc_e1);
  add_rate(kMeta, kG0, rates.metastable_decay * rates.metastable_g0_fraction);
  add_rate(kMeta, kG1,
           rates.metastable_decay * (1.0 - rates.metastable_g0_fraction));
  return a;
}

EvolutionResult evolve_populations(const NvRates& rates, bool laser_on,
                                   double laser_power_mw,
                                   const Populations& initial,
                                   double duration) {
  if (!(duration >= 0.0)) {
    throw std::invalid_argument("evolve_populations: negative duration");
  }
  validate_populations(initial);
  return make_segment(rates, laser_on, laser_power_mw, duration).apply(initial);
}

ReadoutKernel::ReadoutKernel(const NvRates& rates,
                             const ReadoutParams& params) {
  if (!(params.readout_window >= 0.0 &&
        params.readout_window <= params.laser_duration)) {
    throw std::invalid_argument(
        "ReadoutKernel: readout window must fit inside laser pulse");
  }
  if (!(params.wait_duration >= 0.0) || !(params.laser_power >= 0.0)) {
    throw std::invalid_argument("ReadoutKernel: negative duration/power");
  }
  head_ = make_segment(rates, true, params.laser_power, params.readout_window)
              .map;
  tail_ = make_segment(rates, true, params.laser_power,
                       params.laser_duration - params.readout_window)
              .map;
  gap_ = make_segment(rates, false, 0.0, params.wait_duration).map;
  background_readout_ = rates.background_rate * params.readout_window;
  background_saturation_ =
      rates.background_rate * (params.laser_duration - params.readout_window);

  // Fixed point of the drive-free laser/wait cycle: the state the sample is
  // (re-)initialized into between measurements.
  using Matrix5 = Eigen::Matrix<double, 5, 5>;
  const Matrix5 cycle = gap_.topLeftCorner<5, 5>() *
                        tail_.topLeftCorner<5, 5>() * head_.topLeftCorner<5, 5>();
  Matrix5 system = Matrix5::Identity() - cycle;
  system.row(4) = Eigen::Matrix<double, 1, 5>::Ones();
  Eigen::Matrix<double, 5, 1> rhs = Eigen::Matrix<double, 5, 1>::Zero();
  rhs(4) = 1.0;
  initialized_ = system.partialPivLu().solve(rhs);
}

namespace {

using Matrix5 = Eigen::Matrix<double, 5, 5>;

Matrix5 transfer_matrix(double t) {
  Matrix5 m = Matrix5::Identity();
  m(kG0, kG0) = 1.0 - t;
  m(kG0, kG1) = t;
  m(kG1, kG0) = t;
  m(kG1, kG1) = 1.0 - t;
  return m;
}

// Expected photons in one segment; advances the populations through it.
double segment_window(const Matrix6& segment, Populations& p) {
  Vector6 x = Vector6::Zero();
  x.head<5>() = p;
  const Vector6 y = segment * x;
  p = y.head<5>();
  return y(5);
}

void validate_transfers(double transfer_first, double transfer_second) {
  if (!(transfer_first >= 0.0 && transfer_first <= 1.0) ||
      !(transfer_second >= 0.0 && transfer_second <= 1.0)) {
    throw std::invalid_argument(
        "ReadoutKernel: transfer probabilities must lie in [0, 1]");
  }
}

} // namespace

WindowMeans ReadoutKernel::means(double transfer_first,
                                 double transfer_second) const {
  validate_transfers(transfer_first, transfer_second);

  // Populations evolve independently of the photon counter (the augmented
  // map is block triangular), so the cycle's steady state is the
  // unit-eigenvector of the 5x5 population map: solve (I - C) p = 0 with the
  // normalization row sum(p) = 1 replacing one redundant equation.
  const Matrix5 half_first = gap_.topLeftCorner<5, 5>() *
                             tail_.topLeftCorner<5, 5>() *
                             head_.topLeftCorner<5, 5>() *
                             transfer_matrix(transfer_first);
  const Matrix5 half_second = gap_.topLeftCorner<5, 5>() *
                              tail_.topLeftCorner<5, 5>() *
                              head_.topLeftCorner<5, 5>() *
                              transfer_matrix(transfer_second);
  Matrix5 system = Matrix5::Identity() - half_second * half_first;
  system.row(4) = Eigen::Matrix<double, 1, 5>::Ones();
  Eigen::Matrix<double, 5, 1> rhs = Eigen::Matrix<double, 5, 1>::Zero();
  rhs(4) = 1.0;
  const Populations steady = system.partialPivLu().solve(rhs);

  WindowMeans out;
  Populations p = transfer_matrix(transfer_first) * steady;
  out.readout_first = segment_window(head_, p) + background_readout_;
  out.saturation_first = segment_window(tail_, p) + background_saturation_;
  p = gap_.topLeftCorner<5, 5>() * p;
  p = transfer_matrix(transfer_second) * p;
  out.readout_second = segment_window(head_, p) + background_readout_;
  out.saturation_second = segment_window(tail_, p) + background_saturation_;
  return out;
}

WindowMeans ReadoutKernel::prepared_means(double transfer_first,
                                          double transfer_second) const {
  validate_transfers(transfer_first, transfer_second);
  WindowMeans out;
  Populations p = transfer_matrix(transfer_first) * initialized_;
  out.readout_first = segment_window(head_, p) + background_readout_;
  out.saturation_first = segment_window(tail_, p) + background_saturation_;
  p = transfer_matrix(transfer_second) * initialized_;
  out.readout_second = segment_window(head_, p) + background_readout_;
  out.saturation_second = segment_window(tail_, p) + background_saturation_;
  return out;
}

WindowMeans expected_window_means(const NvRates& rates,
                                  const ReadoutParams& params,
                                  double transfer_first,
                                  double transfer_second) {
  return ReadoutKernel(rates, params).means(transfer_first, transfer_second);
}

double ReadoutCounts::total_readout_first() const {
  return total(readout_first);
}
double ReadoutCounts::total_readout_second() const {
  return total(readout_second);
}
double ReadoutCounts::total_saturation_first() const {
  return total(saturation_first);
}
double ReadoutCounts::total_saturation_second() const {
  return total(saturation_second);
}

ReadoutCounts draw_counts(const WindowMeans& means,
                          const ReadoutSettings& settings,
                          std::mt19937_64& rng) {
  if (settings.repetitions == 0 || settings.shots_per_repetition == 0) {
    throw std::invalid_argument("draw_counts: zero repetitions or shots");
  }
  const double shots = settings.shots_per_repetition;
  ReadoutCounts counts;
  counts.readout_first.resize(settings.repetitions);
  counts.saturation_first.resize(settings.repetitions);
  counts.readout_second.resize(settings.repetitions);
  counts.saturation_second.resize(settings.repetitions);
  for (std::uint32_t r = 0; r < settings.repetitions; ++r) {
    // Sum of independent per-shot Poisson counts is Poisson in the summed
    // mean, so each repetition needs one draw per window.
    counts.readout_first[r] = poisson_draw(shots * means.readout_first, rng);
    counts.saturation_first[r] =
        poisson_draw(shots * means.saturation_first, rng);
    counts.readout_second[r] = poisson_draw(shots * means.readout_second, rng);
    counts.saturation_second[r] =
        poisson_draw(shots * means.saturation_second, rng);
  }
  return counts;
}

ReadoutCounts simulate_readout(const NvRates& rates,
                               const ReadoutParams& params,
                               const ReadoutSettings& settings,
                               std::mt19937_64& rng) {
  const WindowMeans means =
      expected_window_means(rates, params, 0.0, settings.inversion_transfer);
  return draw_counts(means, settings, rng);
}

double contrast(const ReadoutCounts& counts) {
  const double r0 = counts.total_readout_first();
  const double r1 = counts.total_readout_second();
  if (r0 + r1 <= 0.0) {
    throw std::invalid_argument("contrast: zero total readout counts");
  }
  return (r0 - r1) / (r0 + r1);
}

double contrast_from_means(const WindowMeans& means) {
  const double sum = means.readout_first + means.readout_second;
  if (sum <= 0.0) {
    throw std::invalid_argument("contrast: zero mean readout counts");
  }
  return (means.readout_first - means.readout_second) / sum;
}

ReadoutNoise readout_noise(double total_first, double total_second) {
  ReadoutNoise out;
  const double diff = total_first - total_second;
  const double sum = total_first + total_second;
  if (diff == 0.0) {
    out.divergent = true;
    out.sigma_r = std::numeric_limits<double>::infinity();
    out.fidelity = 0.0;
    out.fidelity_equivalent = 0.0;
    return out;
  }
  out.sigma_r = std::sqrt(1.0 + 2.0 * sum / (diff * diff));
  out.fidelity = 1.0 / out.sigma_r;
  const double cbar = diff / sum;
  const double rbar = 0.5 * sum;
  out.fidelity_equivalent = 1.0 / std::sqrt(1.0 + 1.0 / (cbar * cbar * rbar));
  return out;
}

ReadoutNoise readout_noise(const ReadoutCounts& counts) {
  return readout_noise(counts.total_readout_first(),
                       counts.total_readout_second());
}

double fom_readout(const ReadoutCounts& counts) {
  const std::size_t n = counts.repetitions();
  if (n < 2) {
    throw std::invalid_argument("fom_readout: need at least 2 repetitions");
  }
  const double sat_total =
      counts.total_saturation_first() + counts.total_saturation_second();
  if (sat_total <= 0.0) {
    throw std::invalid_argument("fom_readout: zero saturation counts");
  }
  const double mean_sum = sat_total / static_cast<double>(n);

  // Two-pass sample variance of the normalized per-repetition saturation
  // difference.
  std::vector<double> d(n);
  double mean_d = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    d[r] = std::abs(static_cast<double>(counts.saturation_first[r]) -
                    static_cast<double>(counts.saturation_second[r])) /
           mean_sum;
    mean_d += d[r];
  }
  mean_d /= static_cast<double>(n);
  double var = 0.0;
  for (const double v : d) {
    var += (v - mean_d) * (v - mean_d);
  }
  var /= static_cast<double>(n - 1);

  return 1.0 - contrast(counts) * (1.0 - var);
}

double fom_readout_from_means(const WindowMeans& means) {
  return 1.0 - contrast_from_means(means);
}

} // namespace nvqoc
