#include <doctest.h>

#include <cmath>
#include <random>
#include <stdexcept>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "nvqoc/photophysics.hpp"

using namespace nvqoc;

namespace {

using Matrix6 = Eigen::Matrix<double, 6, 6>;
using Vector6 = Eigen::Matrix<double, 6, 1>;

Matrix6 augmented(const NvRates& rates, bool laser_on, double power) {
  Matrix6 a = Matrix6::Zero();
  a.topLeftCorner<5, 5>() = rate_matrix(rates, laser_on, power);
  a(5, kE0) = rates.collection_efficiency * rates.radiative;
  a(5, kE1) = rates.collection_efficiency * rates.radiative;
  return a;
}

// Taylor-series matrix exponential with scaling and squaring; written here
// as an oracle independent of the implementation's exponential.
Matrix6 taylor_expm(Matrix6 a) {
  int squarings = 0;
  while (a.cwiseAbs().maxCoeff() > 0.25) {
    a *= 0.5;
    ++squarings;
  }
  Matrix6 result = Matrix6::Identity();
  Matrix6 term = Matrix6::Identity();
  for (int k = 1; k <= 30; ++k) {
    term = (term * a / static_cast<double>(k)).eval();
    result += term;
  }
  for (int s = 0; s < squarings; ++s) {
    result = (result * result).eval();
  }
  return result;
}

// Classical fixed-step RK4 on dx/dt = A x; a third, structurally different
// route to the same propagation.
Vector6 rk4(const Matrix6& a, Vector6 x, double duration, int steps) {
  const double h = duration / steps;
  for (int i = 0; i < steps; ++i) {
    const Vector6 k1 = a * x;
    const Vector6 k2 = a * (x + 0.5 * h * k1);
    const Vector6 k3 = a * (x + 0.5 * h * k2);
    const Vector6 k4 = a * (x + h * k3);
    x += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  }
  return x;
}

NvRates randomized_rates(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.5, 2.0);
  NvRates r;
  r.radiative *= u(rng);
  r.isc_e1 *= u(rng);
  r.isc_e0 *= u(rng);
  r.metastable_decay *= u(rng);
  r.pump_max *= u(rng);
  r.saturation_power *= u(rng);
  r.collection_efficiency *= u(rng);
  r.background_rate *= u(rng);
  return r;
}

Populations random_populations(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Populations p;
  for (int i = 0; i < 5; ++i) p(i) = u(rng);
  p /= p.sum();
  return p;
}

} // namespace

TEST_SUITE("photophysics") {

TEST_CASE("rate matrix conserves probability") {
  std::mt19937_64 rng(3);
  for (int i = 0; i < 20; ++i) {
    const auto r = randomized_rates(rng);
    for (bool on : {false, true}) {
      const auto a = rate_matrix(r, on, 7.5);
      for (int col = 0; col < 5; ++col) {
        CHECK(std::abs(a.col(col).sum()) < 1e-6 * a.cwiseAbs().maxCoeff());
      }
    }
  }
}

TEST_CASE("pump rate saturates with laser power") {
  NvRates r;
  CHECK(r.pump_rate(0.0) == 0.0);
  CHECK(r.pump_rate(r.saturation_power) == doctest::Approx(0.5 * r.pump_max));
  CHECK(r.pump_rate(100.0 * r.saturation_power) ==
        doctest::Approx(r.pump_max).epsilon(0.02));
  CHECK(r.pump_rate(2.0) < r.pump_rate(4.0));
}

TEST_CASE("population evolution matches independent exponentials") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> dur(1e-9, 2e-6);
  for (int i = 0; i < 100; ++i) {
    const auto rates = randomized_rates(rng);
    const bool on = i % 2 == 0;
    const double power = 3.0 + 10.0 * (i % 5);
    const auto p0 = random_populations(rng);
    const double t = dur(rng);

    const auto got = evolve_populations(rates, on, power, p0, t);

    Vector6 x = Vector6::Zero();
    x.head<5>() = p0;
    const Vector6 want = taylor_expm(augmented(rates, on, power) * t) * x;
    for (int j = 0; j < 5; ++j) {
      CHECK(got.populations(j) == doctest::Approx(want(j)).epsilon(1e-11));
    }
    CHECK(got.expected_photons == doctest::Approx(want(5)).epsilon(1e-11));

    const Vector6 coarse = rk4(augmented(rates, on, power), x, t, 20000);
    CHECK(got.expected_photons == doctest::Approx(coarse(5)).epsilon(1e-6));
  }
}

TEST_CASE("populations stay normalized and nonnegative") {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> dur(0.0, 5e-6);
  for (int i = 0; i < 200; ++i) {
    const auto rates = randomized_rates(rng);
    const auto out =
        evolve_populations(rates, i % 2 == 0, 6.0, random_populations(rng), dur(rng));
    CHECK(std::abs(out.populations.sum() - 1.0) < 1e-9);
    CHECK(out.populations.minCoeff() > -1e-12);
    CHECK(out.expected_photons >= 0.0);
  }
}

TEST_CASE("laser-off decay from the excited state yields the branching photon count") {
  NvRates r;
  Populations p = Populations::Zero();
  p(kE0) = 1.0;
  const auto out = evolve_populations(r, false, 0.0, p, 10e-6);
  // Radiative branch from e0 competes only with its intersystem crossing.
  const double branch = r.radiative / (r.radiative + r.isc_e0);
  CHECK(out.expected_photons ==
        doctest::Approx(r.collection_efficiency * branch).epsilon(1e-9));
  CHECK(out.populations(kE0) < 1e-12);
  CHECK(out.populations(kE1) < 1e-12);
  CHECK(out.populations(kMeta) < 1e-9);
}

TEST_CASE("repeated laser pulses polarize into the m_s=0 ground state") {
  NvRates r;
  Populations p = Populations::Zero();
  p(kG0) = 0.5;
  p(kG1) = 0.5;
  double prev_g0 = p(kG0);
  for (int pulse = 0; pulse < 30; ++pulse) {
    p = evolve_populations(r, true, 10.0, p, 1e-6).populations;
    p = evolve_populations(r, false, 0.0, p, 1e-6).populations;
    CHECK(p(kG0) >= prev_g0 - 1e-12);
    prev_g0 = p(kG0);
  }
  CHECK(prev_g0 > 0.75); // spin pumping beats the 50/50 start comfortably
}

TEST_CASE("invalid evolution inputs are rejected") {
  NvRates r;
  Populations p = Populations::Zero();
  p(kG0) = 1.0;
  CHECK_THROWS_AS(evolve_populations(r, true, 5.0, p, -1e-9),
                  std::invalid_argument);
  Populations bad = p;
  bad(kG1) = 0.5; // sums to 1.5
  CHECK_THROWS_AS(evolve_populations(r, true, 5.0, bad, 1e-9),
                  std::invalid_argument);
}

TEST_CASE("window means separate the spin states") {
  NvRates r;
  // Long laser pulse: the tail has time to repolarize before it ends.
  ReadoutParams params{10.0, 2000e-9, 500e-9, 500e-9};
  const auto means = expected_window_means(r, params, 0.0, 1.0);
  // Reference branch keeps the polarized bright state; the flipped branch
  // must be darker in the readout window.
  CHECK(means.readout_first > means.readout_second);
  // Saturation windows sit after repolarization and coincide much more
  // closely than the readout windows do.
  const double readout_gap =
      (means.readout_first - means.readout_second) /
      (0.5 * (means.readout_first + means.readout_second));
  const double sat_gap =
      std::abs(means.saturation_first - means.saturation_second) /
      (0.5 * (means.saturation_first + means.saturation_second));
  CHECK(sat_gap < 0.15);
  CHECK(sat_gap < 0.5 * readout_gap);
}

TEST_CASE("no inversion makes both branches identical") {
  NvRates r;
  ReadoutParams params;
  const auto means = expected_window_means(r, params, 0.0, 0.0);
  CHECK(means.readout_first == doctest::Approx(means.readout_second).epsilon(1e-10));
  CHECK(means.saturation_first ==
        doctest::Approx(means.saturation_second).epsilon(1e-10));
}

TEST_CASE("prepared-state means match an independently propagated cycle") {
  std::mt19937_64 rng(29);
  const NvRates r = randomized_rates(rng);
  const ReadoutParams params{8.0, 1200e-9, 350e-9, 400e-9};

  // Oracle: Taylor-exponential segment maps, drive-free burn-in to the
  // initialized state, then one transfer + laser pass per branch.
  const Matrix6 head = taylor_expm(augmented(r, true, params.laser_power) *
                                   params.readout_window);
  const Matrix6 tail =
      taylor_expm(augmented(r, true, params.laser_power) *
                  (params.laser_duration - params.readout_window));
  const Matrix6 gap = taylor_expm(augmented(r, false, 0.0) * params.wait_duration);
  Vector6 x = Vector6::Zero();
  x.head<5>().setConstant(0.2);
  for (int i = 0; i < 4000; ++i) {
    x = (gap * tail * head * x).eval();
    x(5) = 0.0;
  }
  auto branch = [&](double t) {
    Vector6 y = x;
    const double g0 = y(kG0), g1 = y(kG1);
    y(kG0) = (1.0 - t) * g0 + t * g1;
    y(kG1) = t * g0 + (1.0 - t) * g1;
    const Vector6 after_head = head * y;
    const Vector6 after_tail = tail * after_head;
    const double bg_r = r.background_rate * params.readout_window;
    const double bg_s =
        r.background_rate * (params.laser_duration - params.readout_window);
    return std::pair<double, double>{
        after_head(5) + bg_r, after_tail(5) - after_head(5) + bg_s};
  };

  const ReadoutKernel kernel(r, params);
  for (double t : {0.0, 0.37, 0.81, 1.0}) {
    const auto means = kernel.prepared_means(0.0, t);
    const auto [oracle_r, oracle_s] = branch(t);
    CHECK(means.readout_second == doctest::Approx(oracle_r).epsilon(1e-9));
    CHECK(means.saturation_second == doctest::Approx(oracle_s).epsilon(1e-9));
    const auto [base_r, base_s] = branch(0.0);
    CHECK(means.readout_first == doctest::Approx(base_r).epsilon(1e-9));
    CHECK(means.saturation_first == doctest::Approx(base_s).epsilon(1e-9));
  }
}

TEST_CASE("prepared-state means are affine and branch-symmetric") {
  NvRates r;
  const ReadoutParams params;
  const ReadoutKernel kernel(r, params);

  // Both windows interpolate linearly between their t=0 and t=1 values.
  const auto at0 = kernel.prepared_means(0.0, 0.0);
  const auto at1 = kernel.prepared_means(0.0, 1.0);
  for (double t : {0.125, 0.5, 0.875}) {
    const auto mid = kernel.prepared_means(0.0, t);
    CHECK(mid.readout_second ==
          doctest::Approx((1.0 - t) * at0.readout_second +
                          t * at1.readout_second)
              .epsilon(1e-12));
    CHECK(mid.saturation_second ==
          doctest::Approx((1.0 - t) * at0.saturation_second +
                          t * at1.saturation_second)
              .epsilon(1e-12));
  }

  // Each branch reads the same prepared state, so swapping the transfers
  // swaps the windows.
  const auto ab = kernel.prepared_means(0.3, 0.9);
  const auto ba = kernel.prepared_means(0.9, 0.3);
  CHECK(ab.readout_first == doctest::Approx(ba.readout_second).epsilon(1e-14));
  CHECK(ab.saturation_first ==
        doctest::Approx(ba.saturation_second).epsilon(1e-14));

  // Drive-free, both protocols sit in the same steady state.
  const auto interleaved = kernel.means(0.0, 0.0);
  CHECK(interleaved.readout_first ==
        doctest::Approx(at0.readout_first).epsilon(1e-10));

  // The initialized state is a valid probability vector.
  const auto& init = kernel.initialized_state();
  CHECK(init.sum() == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(init.minCoeff() >= -1e-12);

  CHECK_THROWS_AS(kernel.prepared_means(-0.1, 0.5), std::invalid_argument);
  CHECK_THROWS_AS(kernel.prepared_means(0.0, 1.5), std::invalid_argument);
}

TEST_CASE("background-only model gives equal window means") {
  NvRates r;
  r.pump_max = 0.0; // no optical cycle at all
  ReadoutParams params;
  const auto means = expected_window_means(r, params, 0.0, 1.0);
  CHECK(means.readout_first == doctest::Approx(means.readout_second));
  CHECK(means.readout_first ==
        doctest::Approx(r.background_rate * params.readout_window));

  std::mt19937_64 rng(11);
  ReadoutSettings settings{400, 50, 1.0};
  const auto counts = draw_counts(means, settings, rng);
  // Contrast of pure background is zero within statistics.
  const double total =
      counts.total_readout_first() + counts.total_readout_second();
  const double c = contrast(counts);
  CHECK(std::abs(c) < 3.0 / std::sqrt(total));
}

TEST_CASE("suitable rates reach the paper-scale readout contrast") {
  // Stronger spin-dependent shelving plus a short readout window at the
  // head of a long laser pulse lands in the ~0.33 contrast regime.
  NvRates r;
  r.isc_e1 = 1.0 / 13e-9;
  r.background_rate = 5e3;
  r.pump_max = 1.0 / 30e-9;
  r.saturation_power = 5.0;
  ReadoutParams params{10.0, 1000e-9, 250e-9, 500e-9};
  const double c = contrast_from_means(expected_window_means(r, params, 0.0, 1.0));
  CHECK(c > 0.30);
  CHECK(c < 0.40);
}

TEST_CASE("poisson sampling matches its analytic mean") {
  std::mt19937_64 rng(13);
  WindowMeans means{0.52, 3.1, 0.37, 2.9};
  ReadoutSettings settings{10000, 10, 1.0};
  const auto counts = draw_counts(means, settings, rng);
  const double n = static_cast<double>(settings.repetitions);
  const double shots = settings.shots_per_repetition;
  auto check_mean = [&](double total, double mean_per_shot) {
    const double expected = shots * mean_per_shot;
    const double sigma = std::sqrt(expected / n);
    CHECK(std::abs(total / n - expected) < 3.0 * sigma);
  };
  check_mean(counts.total_readout_first(), means.readout_first);
  check_mean(counts.total_saturation_first(), means.saturation_first);
  check_mean(counts.total_readout_second(), means.readout_second);
  check_mean(counts.total_saturation_second(), means.saturation_second);
}

TEST_CASE("contrast estimator noise scales as one over sqrt A") {
  std::mt19937_64 rng(17);
  const WindowMeans means{2.0, 10.0, 1.4, 10.0};
  auto contrast_std = [&](std::uint32_t reps) {
    std::vector<double> c;
    for (int trial = 0; trial < 120; ++trial) {
      const auto counts = draw_counts(means, {reps, 1, 1.0}, rng);
      c.push_back(contrast(counts));
    }
    double mean = 0.0;
    for (double v : c) mean += v;
    mean /= c.size();
    double var = 0.0;
    for (double v : c) var += (v - mean) * (v - mean);
    return std::sqrt(var / (c.size() - 1));
  };
  const double s3 = contrast_std(1000);
  const double s4 = contrast_std(10000);
  const double s5 = contrast_std(100000);
  const double root10 = std::sqrt(10.0);
  CHECK(s3 / s4 == doctest::Approx(root10).epsilon(0.2));
  CHECK(s4 / s5 == doctest::Approx(root10).epsilon(0.2));
}

TEST_CASE("contrast arithmetic") {
  ReadoutCounts counts;
  counts.readout_first = {60, 40};
  counts.readout_second = {30, 20};
  counts.saturation_first = {10, 10};
  counts.saturation_second = {10, 10};
  CHECK(contrast(counts) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
  counts.readout_second = {60, 40};
  CHECK(contrast(counts) == doctest::Approx(0.0));
  counts.readout_first = {0, 0};
  counts.readout_second = {0, 0};
  CHECK_THROWS_AS(contrast(counts), std::invalid_argument);
}

TEST_CASE("readout noise follows the photon-budget formula") {
  const auto n = readout_noise(100.0, 50.0);
  CHECK(n.sigma_r == doctest::Approx(std::sqrt(1.12)).epsilon(1e-12));
  CHECK(n.fidelity == doctest::Approx(1.0 / std::sqrt(1.12)).epsilon(1e-12));
  CHECK_FALSE(n.divergent);

  // Difference-over-sum contrast with mean counts reproduces the same
  // fidelity exactly.
  CHECK(n.fidelity_equivalent == doctest::Approx(n.fidelity).epsilon(1e-12));

  const auto far = readout_noise(1e8, 1e4);
  CHECK(far.sigma_r == doctest::Approx(1.0).epsilon(1e-3));

  const auto equal = readout_noise(77.0, 77.0);
  CHECK(equal.divergent);
  CHECK(std::isinf(equal.sigma_r));
}

TEST_CASE("noise equivalence holds across random count pairs") {
  std::mt19937_64 rng(19);
  std::uniform_real_distribution<double> u(1.0, 1e6);
  for (int i = 0; i < 200; ++i) {
    const double r0 = u(rng);
    const double r1 = u(rng);
    if (r0 == r1) continue;
    const auto n = readout_noise(r0, r1);
    CHECK(std::abs(n.fidelity - n.fidelity_equivalent) < 1e-12);
  }
}

TEST_CASE("readout figure of merit") {
  SUBCASE("uniform saturation reduces to one minus contrast") {
    ReadoutCounts counts;
    counts.readout_first.assign(10, 13);
    counts.readout_second.assign(10, 7);
    counts.saturation_first.assign(10, 25);
    counts.saturation_second.assign(10, 25);
    CHECK(fom_readout(counts) == doctest::Approx(0.7).epsilon(1e-12));
  }

  SUBCASE("zero contrast pins the figure of merit at one") {
    ReadoutCounts counts;
    counts.readout_first = {40, 60, 50};
    counts.readout_second = {60, 40, 50};
    counts.saturation_first = {22, 31, 18};
    counts.saturation_second = {25, 28, 30};
    CHECK(fom_readout(counts) == doctest::Approx(1.0).epsilon(1e-12));
  }

  SUBCASE("matches a hand-rolled variance computation") {
    std::mt19937_64 rng(23);
    std::uniform_int_distribution<std::uint32_t> cnt(0, 200);
    for (int trial = 0; trial < 50; ++trial) {
      const std::size_t n = 40;
      ReadoutCounts counts;
      for (std::size_t i = 0; i < n; ++i) {
        counts.readout_first.push_back(cnt(rng) + 100);
        counts.readout_second.push_back(cnt(rng));
        counts.saturation_first.push_back(cnt(rng) + 50);
        counts.saturation_second.push_back(cnt(rng) + 50);
      }
      double sat_sum = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        sat_sum += counts.saturation_first[i] + counts.saturation_second[i];
      }
      const double mean_sum = sat_sum / n;
      std::vector<double> d;
      for (std::size_t i = 0; i < n; ++i) {
        d.push_back(std::abs(double(counts.saturation_first[i]) -
                             double(counts.saturation_second[i])) /
                    mean_sum);
      }
      double dm = 0.0;
      for (double v : d) dm += v;
      dm /= n;
      double var = 0.0;
      for (double v : d) var += (v - dm) * (v - dm);
      var /= (n - 1);
      const double r0 = counts.total_readout_first();
      const double r1 = counts.total_readout_second();
      const double want = 1.0 - (r0 - r1) / (r0 + r1) * (1.0 - var);
      CHECK(fom_readout(counts) == doctest::Approx(want).epsilon(1e-12));
    }
  }

  SUBCASE("error paths") {
    ReadoutCounts counts;
    counts.readout_first = {10};
    counts.readout_second = {5};
    counts.saturation_first = {3};
    counts.saturation_second = {4};
    CHECK_THROWS_AS(fom_readout(counts), std::invalid_argument); // N < 2
    counts.readout_first = {10, 10};
    counts.readout_second = {5, 5};
    counts.saturation_first = {0, 0};
    counts.saturation_second = {0, 0};
    CHECK_THROWS_AS(fom_readout(counts), std::invalid_argument);
  }
}

TEST_CASE("simulated readout separates spin states and stays within merit bounds") {
  NvRates r;
  ReadoutParams params;
  std::mt19937_64 rng(29);
  ReadoutSettings settings{200, 400, 1.0};
  const auto counts = simulate_readout(r, params, settings, rng);
  CHECK(counts.total_readout_first() > counts.total_readout_second());
  const double fom = fom_readout(counts);
  CHECK(fom < 1.0);
  CHECK(fom > 0.0);
}

} // TEST_SUITE
