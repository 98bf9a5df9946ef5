#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <complex>
#include <numeric>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "nvqoc/quadrature.hpp"
#include "nvqoc/sequences.hpp"
#include "nvqoc/units.hpp"

using namespace nvqoc;

namespace {

ControlPulse constant_pulse(double u1, double u2, double duration,
                            double max_step) {
  const double magnitude = std::sqrt(u1 * u1 + u2 * u2);
  double dt = max_step;
  if (magnitude > 0.0) dt = std::min(dt, 0.05 / magnitude);
  const int n = std::max(1, static_cast<int>(std::ceil(duration / dt)));
  ControlPulse pulse;
  pulse.dt = duration / n;
  pulse.samples.assign(static_cast<std::size_t>(n), IqSample{u1, u2});
  return pulse;
}

// Closed-form population transfer of a constant-envelope drive.
double rabi_transfer(double rabi, double detuning, double duration) {
  const double generalized = std::sqrt(rabi * rabi + detuning * detuning);
  if (generalized == 0.0) return 0.0;
  const double s = std::sin(0.5 * generalized * duration);
  return (rabi * rabi) / (generalized * generalized) * s * s;
}

SequenceContext quiet_context() {
  SequenceContext ctx;
  ctx.nv.hyperfine = HyperfineModel::single_line();
  ctx.noiseless = true;
  return ctx;
}

double mean(const std::vector<double>& v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double sample_std(const std::vector<double>& v) {
  const double m = mean(v);
  double acc = 0.0;
  for (const double x : v) acc += (x - m) * (x - m);
  return std::sqrt(acc / static_cast<double>(v.size() - 1));
}

// Probability of returning to |0> after U pi_x U, and of reaching |1> after
// U U, for U = exp(-i c.sigma); used as the gate-verification oracle.
double echo_population(double cx, double cy, double cz) {
  const double c = std::sqrt(cx * cx + cy * cy + cz * cz);
  if (c == 0.0) return 0.0;
  const double nx = cx / c, nz = cz / c;
  const double sc = std::sin(c), cc = std::cos(c);
  return 4.0 * nx * nx * sc * sc * (cc * cc + nz * nz * sc * sc);
}

double inversion_population(double cx, double cy, double cz) {
  const double c = std::sqrt(cx * cx + cy * cy + cz * cz);
  if (c == 0.0) return 0.0;
  const double nx = cx / c, ny = cy / c;
  const double s2 = std::sin(2.0 * c);
  return s2 * s2 * (nx * nx + ny * ny);
}

} // namespace

TEST_SUITE("sequences") {

TEST_CASE("gauss-hermite rule reproduces gaussian moments") {
  const QuadratureRule rule = gauss_hermite(21);
  REQUIRE(rule.nodes.size() == 21);
  double w = 0.0, wx2 = 0.0, wcos = 0.0;
  const double a = 1.5;
  for (std::size_t i = 0; i < rule.nodes.size(); ++i) {
    w += rule.weights[i];
    wx2 += rule.weights[i] * rule.nodes[i] * rule.nodes[i];
    wcos += rule.weights[i] * std::cos(a * rule.nodes[i]);
  }
  const double sqrt_pi = std::sqrt(kPi);
  CHECK(w == doctest::Approx(sqrt_pi).epsilon(1e-12));
  CHECK(wx2 == doctest::Approx(0.5 * sqrt_pi).epsilon(1e-12));
  // integral exp(-x^2) cos(ax) dx = sqrt(pi) exp(-a^2/4)
  CHECK(wcos ==
        doctest::Approx(sqrt_pi * std::exp(-0.25 * a * a)).epsilon(1e-10));
  CHECK_THROWS_AS(gauss_hermite(0), std::invalid_argument);
}

TEST_CASE("gauss-legendre rule integrates polynomials and cosine") {
  const QuadratureRule rule = gauss_legendre(20);
  double w = 0.0, wx2 = 0.0, wcos = 0.0;
  for (std::size_t i = 0; i < rule.nodes.size(); ++i) {
    w += rule.weights[i];
    wx2 += rule.weights[i] * rule.nodes[i] * rule.nodes[i];
    wcos += rule.weights[i] * std::cos(rule.nodes[i]);
  }
  CHECK(w == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(wx2 == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
  CHECK(wcos == doctest::Approx(2.0 * std::sin(1.0)).epsilon(1e-12));
  CHECK_THROWS_AS(gauss_legendre(-1), std::invalid_argument);
}

TEST_CASE("gaussian ensemble average matches the analytic decay envelope") {
  // E[cos^2((D + delta) tau / 2)] over lines and a Gaussian quasi-static
  // detuning with sigma = sqrt(2)/T2* has the closed form
  //   1/2 (1 + sum_i w_i cos((D + off_i) tau) exp(-(tau/T2*)^2)).
  const HyperfineModel hf = HyperfineModel::nitrogen14(2.0e-6);
  const double carrier = kTwoPi * 0.3e6;
  for (double tau = 0.0; tau <= 3.0e-6; tau += 2.3e-7) {
    const double got = averaged_transfer(hf, 41, [&](double delta) {
      const double phase = 0.5 * (carrier + delta) * tau;
      const double c = std::cos(phase);
      return c * c;
    });
    double lines = 0.0;
    for (std::size_t i = 0; i < hf.offsets.size(); ++i) {
      lines += hf.weights[i] * std::cos((carrier + hf.offsets[i]) * tau);
    }
    const double envelope = std::exp(-std::pow(tau / hf.t2_star, 2.0));
    const double want = 0.5 * (1.0 + lines * envelope);
    CHECK(got == doctest::Approx(want).epsilon(1e-9));
  }
}

TEST_CASE("lorentzian ensemble average matches a closed-form expectation") {
  HyperfineModel hf = HyperfineModel::single_line();
  hf.t2_star = 2.0e-6;
  hf.decay_order = 1.0;
  const double gamma = 1.0 / hf.t2_star;
  // E[gamma^2/(gamma^2 + delta^2)] over a Cauchy(gamma) draw is exactly 1/2.
  const double got = averaged_transfer(hf, 80, [&](double delta) {
    return gamma * gamma / (gamma * gamma + delta * delta);
  });
  CHECK(got == doctest::Approx(0.5).epsilon(1e-10));

  // Constant integrands are preserved for every distribution.
  CHECK(averaged_transfer(hf, 16, [](double) { return 0.75; }) ==
        doctest::Approx(0.75).epsilon(1e-12));
  const HyperfineModel n14 = HyperfineModel::nitrogen14();
  CHECK(averaged_transfer(n14, 16, [](double) { return 0.75; }) ==
        doctest::Approx(0.75).epsilon(1e-12));

  HyperfineModel bad = n14;
  bad.decay_order = 3.0;
  CHECK_THROWS_AS(
      averaged_transfer(bad, 16, [](double) { return 0.0; }),
      std::invalid_argument);
  CHECK_THROWS_AS(
      averaged_transfer(n14, 0, [](double) { return 0.0; }),
      std::invalid_argument);
}

TEST_CASE("detuning sampler reproduces the mixture moments") {
  const HyperfineModel hf = HyperfineModel::nitrogen14(2.0e-6);
  DetuningSampler sampler(hf);
  std::mt19937_64 rng(77);
  const int n = 200000;
  double sum = 0.0, sum2 = 0.0;
  std::array<int, 3> occupancy{0, 0, 0};
  const double split = kTwoPi * 2.16e6;
  for (int i = 0; i < n; ++i) {
    const double d = sampler(rng);
    sum += d;
    sum2 += d * d;
    if (d < -0.5 * split) {
      ++occupancy[0];
    } else if (d > 0.5 * split) {
      ++occupancy[2];
    } else {
      ++occupancy[1];
    }
  }
  const double sigma = hf.detuning_sigma();
  const double line_var = (2.0 / 3.0) * split * split;
  const double want_var = line_var + sigma * sigma;
  CHECK(std::abs(sum / n) < 4.0 * std::sqrt(want_var / n));
  CHECK(sum2 / n == doctest::Approx(want_var).epsilon(0.03));
  for (const int count : occupancy) {
    CHECK(std::abs(count / static_cast<double>(n) - 1.0 / 3.0) < 0.02);
  }
}

TEST_CASE("lorentzian sampler has the right median spread") {
  HyperfineModel hf = HyperfineModel::single_line();
  hf.t2_star = 1.0e-6;
  hf.decay_order = 1.0;
  DetuningSampler sampler(hf);
  std::mt19937_64 rng(78);
  const int n = 100000;
  const double gamma = 1.0 / hf.t2_star;
  int within = 0;
  int positive = 0;
  for (int i = 0; i < n; ++i) {
    const double d = sampler(rng);
    if (std::abs(d) < gamma) ++within;
    if (d > 0.0) ++positive;
  }
  // Half the Cauchy mass lies within one half-width of the center.
  CHECK(std::abs(within / static_cast<double>(n) - 0.5) < 0.01);
  CHECK(std::abs(positive / static_cast<double>(n) - 0.5) < 0.01);
}

TEST_CASE("amplitude scan construction and validation") {
  const AmplitudeScan scan = AmplitudeScan::uniform(5);
  REQUIRE(scan.scales.size() == 5);
  CHECK(scan.scales.front() == doctest::Approx(0.2));
  CHECK(scan.scales.back() == 1.0);
  scan.validate();

  CHECK_THROWS_AS(AmplitudeScan::uniform(0), std::invalid_argument);
  CHECK_THROWS_AS(AmplitudeScan{}.validate(), std::invalid_argument);
  CHECK_THROWS_AS((AmplitudeScan{{0.4, 0.2}}.validate()), std::invalid_argument);
  CHECK_THROWS_AS((AmplitudeScan{{0.0, 0.5}}.validate()), std::invalid_argument);
  CHECK_THROWS_AS((AmplitudeScan{{0.5, 1.2}}.validate()), std::invalid_argument);
}

TEST_CASE("inversion robustness figure follows the scaled-rabi closed form") {
  SequenceContext ctx = quiet_context();
  const ControlPulse pi_pulse =
      make_rectangular_pulse(ctx.nv.rabi_max, ctx.nv.pi_duration());
  const AmplitudeScan scan = AmplitudeScan::uniform(5);
  const SequenceResult result = podmr_fom(pi_pulse, scan, ctx, 1);

  REQUIRE(result.scales.size() == 5);
  const ReadoutKernel kernel(ctx.nv.rates, ctx.readout);
  const double norm =
      ctx.shots.repetitions * static_cast<double>(ctx.shots.shots_per_repetition);
  double contrast_sum = 0.0;
  for (std::size_t k = 0; k < result.scales.size(); ++k) {
    // On resonance a scaled rectangular pi pulse transfers sin^2(s pi/2).
    const double s = result.scales[k];
    const double t = std::pow(std::sin(0.5 * kPi * s), 2.0);
    const auto means = kernel.prepared_means(0.0, t);
    CHECK(result.counts_first[k] ==
          doctest::Approx(norm * means.readout_first).epsilon(1e-9));
    CHECK(result.counts_second[k] ==
          doctest::Approx(norm * means.readout_second).epsilon(1e-9));
    const double want_contrast = contrast_from_means(means);
    CHECK(result.contrast[k] == doctest::Approx(want_contrast).epsilon(1e-9));
    contrast_sum += result.contrast[k];
  }
  CHECK(result.fom == doctest::Approx(1.0 - contrast_sum / 5.0).epsilon(1e-12));

  // Full transfer at full scale reaches the configuration's contrast ceiling.
  const AmplitudeScan full{{1.0}};
  const SequenceResult at_full = podmr_fom(pi_pulse, full, ctx, 1);
  const double ceiling = contrast_from_means(kernel.prepared_means(0.0, 1.0));
  CHECK(at_full.fom == doctest::Approx(1.0 - ceiling).epsilon(1e-9));
}

TEST_CASE("zero-amplitude pulse scores the trivial figure of merit") {
  SequenceContext ctx = quiet_context();
  ControlPulse silent = make_rectangular_pulse(0.0, 100e-9, 5e-9);
  const SequenceResult result =
      podmr_fom(silent, AmplitudeScan::uniform(5), ctx, 1);
  for (const double c : result.contrast) {
    CHECK(std::abs(c) < 1e-12);
  }
  CHECK(result.fom == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("figure of merit is recomputable from the reported counts") {
  SequenceContext ctx = quiet_context();
  ctx.noiseless = false;
  ctx.shots = ReadoutSettings{50, 100, 1.0};
  const ControlPulse pulse =
      make_rectangular_pulse(ctx.nv.rabi_max, ctx.nv.pi_duration());
  const SequenceResult result =
      podmr_fom(pulse, AmplitudeScan::uniform(5), ctx, 42);

  double contrast_sum = 0.0;
  for (std::size_t k = 0; k < result.scales.size(); ++k) {
    const double recomputed =
        (result.counts_first[k] - result.counts_second[k]) /
        (result.counts_first[k] + result.counts_second[k]);
    CHECK(result.contrast[k] == doctest::Approx(recomputed).epsilon(1e-12));
    contrast_sum += recomputed;
  }
  CHECK(result.fom ==
        doctest::Approx(1.0 - contrast_sum / result.scales.size()).epsilon(1e-12));
  CHECK(result.fom_std_error > 0.0);
}

TEST_CASE("per-point seeds make results order- and subset-invariant") {
  SequenceContext ctx = quiet_context();
  ctx.noiseless = false;
  const ControlPulse pulse =
      make_rectangular_pulse(ctx.nv.rabi_max, ctx.nv.pi_duration());

  const SequenceResult full =
      podmr_fom(pulse, AmplitudeScan::uniform(5), ctx, 9001);
  const SequenceResult repeat =
      podmr_fom(pulse, AmplitudeScan::uniform(5), ctx, 9001);
  CHECK(full.counts_first == repeat.counts_first);
  CHECK(full.counts_second == repeat.counts_second);

  // Each scale's counts depend only on (seed, scale), not on the sub-grid.
  for (std::size_t k = 0; k < full.scales.size(); ++k) {
    const AmplitudeScan single{{full.scales[k]}};
    const SequenceResult alone = podmr_fom(pulse, single, ctx, 9001);
    CHECK(alone.counts_first[0] == full.counts_first[k]);
    CHECK(alone.counts_second[0] == full.counts_second[k]);
  }

  const SequenceResult other = podmr_fom(pulse, AmplitudeScan::uniform(5), ctx, 9002);
  CHECK(other.counts_second != full.counts_second);

  // Noiseless evaluation ignores the seed entirely.
  ctx.noiseless = true;
  const SequenceResult quiet_a =
      podmr_fom(pulse, AmplitudeScan::uniform(5), ctx, 1);
  const SequenceResult quiet_b =
      podmr_fom(pulse, AmplitudeScan::uniform(5), ctx, 2);
  CHECK(quiet_a.counts_second == quiet_b.counts_second);
  CHECK(quiet_a.fom == quiet_b.fom);
}

TEST_CASE("figure of merit decomposes as the mean over single-scale runs") {
  SequenceContext ctx = quiet_context();
  const ControlPulse pulse =
      make_rectangular_pulse(ctx.nv.rabi_max, ctx.nv.pi_duration());
  const AmplitudeScan scan = AmplitudeScan::uniform(4);
  const SequenceResult joint = podmr_fom(pulse, scan, ctx, 5);
  double fom_sum = 0.0;
  for (const double s : scan.scales) {
    const AmplitudeScan single{{s}};
    fom_sum += podmr_fom(pulse, single, ctx, 5).fom;
  }
  CHECK(joint.fom ==
        doctest::Approx(fom_sum / scan.scales.size()).epsilon(1e-12));
}

TEST_CASE("hyperfine structure weakens a resonant pi pulse") {
  SequenceContext single = quiet_context();
  SequenceContext triplet = quiet_context();
  triplet.nv.hyperfine = HyperfineModel::nitrogen14(2.0e-6);
  // A slow pulse resolves the hyperfine splitting, so the outer lines are
  // driven off-resonantly and the averaged inversion drops.
  triplet.nv.rabi_max = single.nv.rabi_max = kTwoPi * 1.0e6;
  const ControlPulse pulse =
      make_rectangular_pulse(single.nv.rabi_max, single.nv.pi_duration());
  const AmplitudeScan full{{1.0}};
  const double fom_single = podmr_fom(pulse, full, single, 3).fom;
  const double fom_triplet = podmr_fom(pulse, full, triplet, 3).fom;
  CHECK(fom_triplet > fom_single + 0.01);
}

TEST_CASE("monte-carlo figure of merit error shrinks as one over sqrt n") {
  SequenceContext ctx = quiet_context();
  ctx.noiseless = false;
  ctx.shots = ReadoutSettings{100, 50, 1.0};
  const ControlPulse pulse =
      make_rectangular_pulse(ctx.nv.rabi_max, ctx.nv.pi_duration());
  const AmplitudeScan scan = AmplitudeScan::uniform(5);

  auto trial_stats = [&](std::uint32_t reps, int trials, std::uint64_t base,
                         double* reported) {
    SequenceContext local = ctx;
    local.shots.repetitions = reps;
    std::vector<double> foms;
    double se_sum = 0.0;
    for (int i = 0; i < trials; ++i) {
      const SequenceResult r =
          podmr_fom(pulse, scan, local, base + static_cast<std::uint64_t>(i));
      foms.push_back(r.fom);
      se_sum += r.fom_std_error;
    }
    *reported = se_sum / trials;
    return sample_std(foms);
  };

  double reported_small = 0.0, reported_large = 0.0;
  const double std_small = trial_stats(100, 60, 1000, &reported_small);
  const double std_large = trial_stats(400, 60, 2000, &reported_large);

  // Quadrupling the repetitions halves the standard error.
  CHECK(std_small / std_large > 1.4);
  CHECK(std_small / std_large < 2.9);
  CHECK(reported_small / reported_large == doctest::Approx(2.0).epsilon(0.05));

  // The reported shot-noise error tracks the empirical scatter.
  CHECK(reported_small == doctest::Approx(std_small).epsilon(0.45));
  CHECK(reported_large == doctest::Approx(std_large).epsilon(0.45));
}

TEST_CASE("per-repetition dephasing draws agree with the quadrature average") {
  SequenceContext expectation = quiet_context();
  expectation.nv.hyperfine = HyperfineModel::nitrogen14(2.0e-6);
  expectation.nv.rabi_max = kTwoPi * 1.0e6; // slow pulse, visible dephasing
  const ControlPulse pulse = make_rectangular_pulse(
      expectation.nv.rabi_max, expectation.nv.pi_duration());
  const AmplitudeScan full{{1.0}};
  const double quiet_fom = podmr_fom(pulse, full, expectation, 1).fom;

  SequenceContext drawn = expectation;
  drawn.noiseless = false;
  drawn.sampling = DephasingSampling::PerRepetition;
  drawn.shots = ReadoutSettings{200, 200, 1.0};
  std::vector<double> foms;
  for (int i = 0; i < 40; ++i) {
    foms.push_back(podmr_fom(pulse, full, drawn, 100 + i).fom);
  }
  const double se = sample_std(foms) / std::sqrt(40.0);
  CHECK(std::abs(mean(foms) - quiet_fom) < 5.0 * se + 1e-4);

  // Per-repetition draws require a stochastic run.
  SequenceContext invalid = drawn;
  invalid.noiseless = true;
  CHECK_THROWS_AS(podmr_fom(pulse, full, invalid, 1), std::invalid_argument);
}

TEST_CASE("sequence input validation") {
  SequenceContext ctx = quiet_context();
  const ControlPulse pulse =
      make_rectangular_pulse(ctx.nv.rabi_max, ctx.nv.pi_duration());

  ControlPulse empty;
  empty.dt = 1e-9;
  CHECK_THROWS_AS(podmr_fom(empty, AmplitudeScan::uniform(3), ctx, 1),
                  std::invalid_argument);

  SequenceContext zero_shots = ctx;
  zero_shots.shots.repetitions = 0;
  CHECK_THROWS_AS(podmr_fom(pulse, AmplitudeScan::uniform(3), zero_shots, 1),
                  std::invalid_argument);

  SequenceContext bad_nodes = ctx;
  bad_nodes.quadrature_nodes = 0;
  CHECK_THROWS_AS(podmr_fom(pulse, AmplitudeScan::uniform(3), bad_nodes, 1),
                  std::invalid_argument);

  CHECK_THROWS_AS(ramsey_fringe(pulse, {}, ctx, 1), std::invalid_argument);
  CHECK_THROWS_AS(ramsey_fringe(pulse, {-1e-9}, ctx, 1), std::invalid_argument);
  CHECK_THROWS_AS(
      podmr_spectrum(pulse, AmplitudeScan::uniform(3), {}, ctx, 1),
      std::invalid_argument);
}

TEST_CASE("gate verification rewards the quarter-rotation and flags identity") {
  SequenceContext ctx = quiet_context();
  const ControlPulse half =
      make_rectangular_pulse(ctx.nv.rabi_max, 0.5 * ctx.nv.pi_duration());
  const ControlPulse pi_ref =
      make_rectangular_pulse(ctx.nv.rabi_max, ctx.nv.pi_duration());
  const AmplitudeScan full{{1.0}};
  const ReadoutKernel kernel(ctx.nv.rates, ctx.readout);
  const double ceiling = contrast_from_means(kernel.prepared_means(0.0, 1.0));

  // Ideal pi/2: echo branch returns to |0>, double pulse fully inverts.
  const SequenceResult ideal =
      gate_verification_fom(half, full, pi_ref, ctx, 1);
  CHECK(ideal.fom == doctest::Approx(1.0 - ceiling).epsilon(1e-9));

  // Identity pulse: the reference alone flips the echo branch while the
  // double pulse leaves |0> bright, so the contrast inverts.
  ControlPulse silent = make_rectangular_pulse(0.0, 10e-9, 1e-9);
  const SequenceResult inverted =
      gate_verification_fom(silent, full, pi_ref, ctx, 1);
  CHECK(inverted.fom == doctest::Approx(1.0 + ceiling).epsilon(1e-9));
  CHECK(inverted.contrast[0] < 0.0);
}

TEST_CASE("gate verification matches the axis-angle closed forms") {
  SequenceContext ctx = quiet_context();
  const ControlPulse pi_ref =
      make_rectangular_pulse(ctx.nv.rabi_max, ctx.nv.pi_duration());
  const ReadoutKernel kernel(ctx.nv.rates, ctx.readout);
  const double norm =
      ctx.shots.repetitions * static_cast<double>(ctx.shots.shots_per_repetition);
  const AmplitudeScan full{{1.0}};

  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> angle(0.05, 3.0);
  std::uniform_real_distribution<double> phase(0.0, kTwoPi);
  for (int i = 0; i < 40; ++i) {
    // Constant drive along a random equatorial axis: U = exp(-i c.sigma)
    // with c = (theta/2)(cos phi, sin phi, 0).
    const double theta = angle(rng);
    const double phi = phase(rng);
    const double duration = theta / ctx.nv.rabi_max;
    const ControlPulse pulse =
        constant_pulse(ctx.nv.rabi_max * std::cos(phi),
                       ctx.nv.rabi_max * std::sin(phi), duration, 1e-10);
    const double cx = 0.5 * theta * std::cos(phi);
    const double cy = 0.5 * theta * std::sin(phi);
    const double t_echo = 1.0 - echo_population(cx, cy, 0.0);
    const double t_inv = inversion_population(cx, cy, 0.0);
    const auto means = kernel.prepared_means(t_echo, t_inv);

    const SequenceResult got =
        gate_verification_fom(pulse, full, pi_ref, ctx, 1);
    CHECK(got.counts_first[0] ==
          doctest::Approx(norm * means.readout_first).epsilon(1e-7));
    CHECK(got.counts_second[0] ==
          doctest::Approx(norm * means.readout_second).epsilon(1e-7));
  }
}

TEST_CASE("reference pi pulse stays at full amplitude under the scan") {
  SequenceContext ctx = quiet_context();
  const ControlPulse half =
      make_rectangular_pulse(ctx.nv.rabi_max, 0.5 * ctx.nv.pi_duration());
  const ControlPulse pi_ref =
      make_rectangular_pulse(ctx.nv.rabi_max, ctx.nv.pi_duration());
  const AmplitudeScan half_scale{{0.5}};
  const SequenceResult result =
      gate_verification_fom(half, half_scale, pi_ref, ctx, 1);
  // At half drive U is a pi/4 rotation: echo population and inversion are
  // both 1/2 only when the reference still applies a full pi, and then the
  // two branches coincide exactly.
  CHECK(result.contrast[0] == doctest::Approx(0.0).epsilon(1e-9));
  CHECK(result.counts_first[0] ==
        doctest::Approx(result.counts_second[0]).epsilon(1e-9));
}

TEST_CASE("gate figure of merit attains its minimum exactly on the quarter-rotation manifold") {
  SequenceContext ctx = quiet_context();
  const ReadoutKernel kernel(ctx.nv.rates, ctx.readout);

  // Noiseless landscape over axis-angle space, evaluated through the same
  // count model the protocol uses. 49^3 = 117649 grid points include the
  // manifold c = (pi/4 + k pi/2, 0, 0).
  const int n = 49;
  const double step = kTwoPi / (n - 1); // over [-pi, pi]
  double best = 2.0;
  std::vector<std::array<double, 3>> argmin;
  const std::array<double, 4> manifold_cx{-0.75 * kPi, -0.25 * kPi,
                                          0.25 * kPi, 0.75 * kPi};
  auto manifold_distance = [&](double cx, double cy, double cz) {
    double d = 1e9;
    for (const double target : manifold_cx) {
      d = std::min(d, std::sqrt((cx - target) * (cx - target) + cy * cy +
                                cz * cz));
    }
    return d;
  };

  for (int ix = 0; ix < n; ++ix) {
    const double cx = -kPi + ix * step;
    for (int iy = 0; iy < n; ++iy) {
      const double cy = -kPi + iy * step;
      for (int iz = 0; iz < n; ++iz) {
        const double cz = -kPi + iz * step;
        const double t_echo = std::clamp(
            1.0 - echo_population(cx, cy, cz), 0.0, 1.0);
        const double t_inv =
            std::clamp(inversion_population(cx, cy, cz), 0.0, 1.0);
        const double fom =
            1.0 - contrast_from_means(kernel.prepared_means(t_echo, t_inv));
        if (fom < best - 1e-12) {
          best = fom;
          argmin.clear();
        }
        if (fom <= best + 1e-12) {
          argmin.push_back({cx, cy, cz});
        }
      }
    }
  }

  // The global minimum is attained at (and only at) the manifold points the
  // grid contains, and it equals the value at the canonical quarter rotation.
  const double ceiling = contrast_from_means(kernel.prepared_means(0.0, 1.0));
  CHECK(best == doctest::Approx(1.0 - ceiling).epsilon(1e-12));
  CHECK(argmin.size() >= 4);
  for (const auto& point : argmin) {
    CHECK(manifold_distance(point[0], point[1], point[2]) < 1e-9);
  }
}

TEST_CASE("spectrum shows a resonance dip on a flat baseline") {
  SequenceContext ctx = quiet_context();
  ctx.nv.rabi_max = kTwoPi * 5.0e6;
  const ControlPulse pulse =
      make_rectangular_pulse(ctx.nv.rabi_max, ctx.nv.pi_duration());
  const AmplitudeScan full{{1.0}};

  std::vector<double> detunings;
  for (double f = -30e6; f <= 30.0001e6; f += 1.0e6) {
    detunings.push_back(kTwoPi * f);
  }
  const SpectrumResult spectrum =
      podmr_spectrum(pulse, full, detunings, ctx, 1);
  REQUIRE(spectrum.normalized.size() == 1);
  const std::vector<double>& row = spectrum.normalized[0];
  REQUIRE(row.size() == detunings.size());

  const std::size_t center = detunings.size() / 2;
  CHECK(detunings[center] == 0.0);
  // Far tails sit on the baseline; the resonance is the global minimum.
  CHECK(row.front() > 0.99);
  CHECK(row.back() > 0.99);
  CHECK(*std::min_element(row.begin(), row.end()) == row[center]);

  // Baseline normalization makes the dip depth the bright-referenced
  // contrast of a full inversion.
  const ReadoutKernel kernel(ctx.nv.rates, ctx.readout);
  const auto means = kernel.prepared_means(0.0, 1.0);
  const double bright_referenced =
      (means.readout_first - means.readout_second) / means.readout_first;
  CHECK(1.0 - row[center] == doctest::Approx(bright_referenced).epsilon(1e-9));

  // Full lineshape against the closed-form detuned-Rabi oracle.
  double worst = 0.0;
  for (std::size_t i = 0; i < row.size(); ++i) {
    const double t =
        rabi_transfer(ctx.nv.rabi_max, detunings[i], pulse.duration());
    const double want = 1.0 - bright_referenced * t;
    worst = std::max(worst, std::abs(row[i] - want));
  }
  CHECK(worst < 0.02);  // protocol contract
  CHECK(worst < 1e-9);  // affine-readout implementation is exact
}

TEST_CASE("noisy spectrum points are tied to their coordinates") {
  SequenceContext ctx = quiet_context();
  ctx.noiseless = false;
  ctx.nv.rabi_max = kTwoPi * 5.0e6;
  const ControlPulse pulse =
      make_rectangular_pulse(ctx.nv.rabi_max, ctx.nv.pi_duration());
  const AmplitudeScan scan{{0.5, 1.0}};
  const std::vector<double> grid{-kTwoPi * 2e6, 0.0, kTwoPi * 2e6};

  const SpectrumResult full = podmr_spectrum(pulse, scan, grid, ctx, 31);
  const AmplitudeScan only_full{{1.0}};
  const std::vector<double> sub_grid{0.0};
  const SpectrumResult sub =
      podmr_spectrum(pulse, only_full, sub_grid, ctx, 31);
  CHECK(sub.normalized[0][0] == full.normalized[1][1]);

  const SpectrumResult again = podmr_spectrum(pulse, scan, grid, ctx, 31);
  CHECK(again.normalized == full.normalized);
}

TEST_CASE("ramsey fringe oscillates at exactly the carrier detuning") {
  SequenceContext ctx = quiet_context();
  ctx.nv.rabi_max = kTwoPi * 500e6; // nearly ideal, very fast pulses
  ctx.carrier_detuning = kTwoPi * 2.0e6;
  const ControlPulse half =
      make_rectangular_pulse(ctx.nv.rabi_max, 0.5 * ctx.nv.pi_duration());

  std::vector<double> delays;
  for (int i = 0; i < 151; ++i) delays.push_back(i * 10e-9);
  const RamseyResult fringe = ramsey_fringe(half, delays, ctx, 1);
  REQUIRE(fringe.normalized.size() == delays.size());

  // tau = 0: the two half pulses compose to a full inversion, the fringe
  // bottoms out.
  const double minimum =
      *std::min_element(fringe.normalized.begin(), fringe.normalized.end());
  CHECK(fringe.normalized.front() == minimum);

  // Counts are affine in the transfer, so invert them and fit the generic
  // sinusoid m + a cos(D tau) + b sin(D tau) at the drive detuning; the
  // residual vanishes only if the fringe frequency is exactly D.
  const ReadoutKernel kernel(ctx.nv.rates, ctx.readout);
  const double norm =
      ctx.shots.repetitions * static_cast<double>(ctx.shots.shots_per_repetition);
  const double bright = norm * kernel.prepared_means(0.0, 0.0).readout_second;
  const double dark = norm * kernel.prepared_means(0.0, 1.0).readout_second;
  std::vector<double> transfer(delays.size());
  for (std::size_t i = 0; i < delays.size(); ++i) {
    CHECK(fringe.counts_baseline[i] == doctest::Approx(bright).epsilon(1e-10));
    transfer[i] = (bright - fringe.counts_signal[i]) / (bright - dark);
  }

  Eigen::MatrixXd design(delays.size(), 3);
  Eigen::VectorXd y(delays.size());
  for (std::size_t i = 0; i < delays.size(); ++i) {
    design(i, 0) = 1.0;
    design(i, 1) = std::cos(ctx.carrier_detuning * delays[i]);
    design(i, 2) = std::sin(ctx.carrier_detuning * delays[i]);
    y(i) = transfer[i];
  }
  const Eigen::VectorXd coeffs =
      design.colPivHouseholderQr().solve(y);
  const Eigen::VectorXd residual = design * coeffs - y;
  CHECK(residual.cwiseAbs().maxCoeff() < 1e-6);

  // With nearly ideal pulses the fringe approaches cos^2(D tau / 2).
  double worst = 0.0;
  for (std::size_t i = 0; i < delays.size(); ++i) {
    const double ideal =
        std::pow(std::cos(0.5 * ctx.carrier_detuning * delays[i]), 2.0);
    worst = std::max(worst, std::abs(transfer[i] - ideal));
  }
  CHECK(worst < 5e-3);
}

TEST_CASE("ramsey fringe matches the dense two-level oracle with real pulses") {
  SequenceContext ctx = quiet_context();
  ctx.nv.rabi_max = kTwoPi * 25e6;
  ctx.carrier_detuning = kTwoPi * 2.0e6;
  const ControlPulse half =
      make_rectangular_pulse(ctx.nv.rabi_max, 0.5 * ctx.nv.pi_duration());

  std::vector<double> delays;
  for (int i = 0; i < 40; ++i) delays.push_back(i * 37e-9);
  const RamseyResult fringe = ramsey_fringe(half, delays, ctx, 1);

  const ReadoutKernel kernel(ctx.nv.rates, ctx.readout);
  const double norm =
      ctx.shots.repetitions * static_cast<double>(ctx.shots.shots_per_repetition);
  const double bright = norm * kernel.prepared_means(0.0, 0.0).readout_second;
  const double dark = norm * kernel.prepared_means(0.0, 1.0).readout_second;

  // Oracle: dense 2x2 arithmetic for [half pulse][phase evolution][half
  // pulse] built from the closed-form constant-drive propagator.
  const double omega = ctx.nv.rabi_max;
  const double delta = ctx.carrier_detuning;
  const double g = std::sqrt(omega * omega + delta * delta);
  const double t_p = half.duration();
  using cd = std::complex<double>;
  Eigen::Matrix2cd u_half;
  {
    const double half_angle = 0.5 * g * t_p;
    const double c = std::cos(half_angle), s = std::sin(half_angle);
    u_half << cd(c, -delta / g * s), cd(0.0, -omega / g * s),
        cd(0.0, -omega / g * s), cd(c, delta / g * s);
  }
  for (std::size_t i = 0; i < delays.size(); ++i) {
    Eigen::Matrix2cd phase = Eigen::Matrix2cd::Zero();
    phase(0, 0) = std::exp(cd(0.0, -0.5 * delta * delays[i]));
    phase(1, 1) = std::exp(cd(0.0, 0.5 * delta * delays[i]));
    const Eigen::Matrix2cd seq = u_half * phase * u_half;
    const double want = std::norm(seq(1, 0));
    const double got =
        (bright - fringe.counts_signal[i]) / (bright - dark);
    CHECK(got == doctest::Approx(want).epsilon(1e-9));
  }
}

TEST_CASE("hyperfine beating decays under the gaussian envelope") {
  SequenceContext ctx = quiet_context();
  ctx.nv.hyperfine = HyperfineModel::nitrogen14(2.0e-6);
  ctx.nv.rabi_max = kTwoPi * 100e6;
  ctx.carrier_detuning = 0.0;
  ctx.quadrature_nodes = 41;
  const ControlPulse half =
      make_rectangular_pulse(ctx.nv.rabi_max, 0.5 * ctx.nv.pi_duration());

  std::vector<double> delays;
  for (int i = 0; i < 241; ++i) delays.push_back(i * 25e-9);
  const RamseyResult fringe = ramsey_fringe(half, delays, ctx, 1);

  const ReadoutKernel kernel(ctx.nv.rates, ctx.readout);
  const double norm =
      ctx.shots.repetitions * static_cast<double>(ctx.shots.shots_per_repetition);
  const double bright = norm * kernel.prepared_means(0.0, 0.0).readout_second;
  const double dark = norm * kernel.prepared_means(0.0, 1.0).readout_second;

  // Ensemble identity: on resonance, three symmetric lines under the
  // Gaussian quasi-static detuning give, for ideal half pulses,
  //   t(tau) = 1/2 (1 + (1 + 2 cos(w_h tau))/3 exp(-(tau/T2*)^2)).
  // The outer lines see the finite pulse off-resonantly, which perturbs the
  // fringe by O(w_h / rabi_max); the bound sits just above that.
  const double w_h = kTwoPi * 2.16e6;
  double worst = 0.0;
  for (std::size_t i = 0; i < delays.size(); ++i) {
    const double tau = delays[i];
    const double got = (bright - fringe.counts_signal[i]) / (bright - dark);
    const double envelope =
        std::exp(-std::pow(tau / ctx.nv.hyperfine.t2_star, 2.0));
    const double want =
        0.5 * (1.0 + (1.0 + 2.0 * std::cos(w_h * tau)) / 3.0 * envelope);
    worst = std::max(worst, std::abs(got - want));
  }
  CHECK(worst < 2.0 * w_h / ctx.nv.rabi_max);

  // Envelope readback at the beat revivals cos(w_h tau) = 1, where
  // t = (1 + envelope)/2: the recovered decay tracks exp(-(tau/T2*)^2)
  // within 10% out to tau ~ 1.4 T2*.
  std::vector<double> revivals;
  for (int k = 1; k <= 6; ++k) revivals.push_back(k / 2.16e6);
  const RamseyResult at_revivals = ramsey_fringe(half, revivals, ctx, 1);
  for (std::size_t i = 0; i < revivals.size(); ++i) {
    const double t =
        (bright - at_revivals.counts_signal[i]) / (bright - dark);
    const double recovered = 2.0 * t - 1.0;
    const double want =
        std::exp(-std::pow(revivals[i] / ctx.nv.hyperfine.t2_star, 2.0));
    CHECK(recovered == doctest::Approx(want).epsilon(0.10));
  }

  // Beating collapses once the envelope dies: the late-time fringe swing is
  // a small fraction of the early swing.
  auto swing = [&](std::size_t lo, std::size_t hi) {
    const auto [mn, mx] = std::minmax_element(fringe.normalized.begin() + lo,
                                              fringe.normalized.begin() + hi);
    return *mx - *mn;
  };
  CHECK(swing(200, 241) < 0.15 * swing(0, 41));
}

TEST_CASE("amplitude miscalibration shrinks the plain ramsey fringe") {
  SequenceContext ctx = quiet_context();
  ctx.carrier_detuning = kTwoPi * 1.0e6;
  const ControlPulse half =
      make_rectangular_pulse(ctx.nv.rabi_max, 0.5 * ctx.nv.pi_duration());
  std::vector<double> delays;
  for (int i = 0; i < 101; ++i) delays.push_back(i * 10e-9);

  auto fringe_swing = [&](double scale) {
    const RamseyResult fringe = ramsey_fringe(half, delays, ctx, 1, scale);
    const auto [mn, mx] = std::minmax_element(fringe.normalized.begin(),
                                              fringe.normalized.end());
    return *mx - *mn;
  };
  CHECK(fringe_swing(0.5) < 0.6 * fringe_swing(1.0));
}

TEST_CASE("noisy ramsey points are reproducible and coordinate-tied") {
  SequenceContext ctx = quiet_context();
  ctx.noiseless = false;
  ctx.carrier_detuning = kTwoPi * 1.0e6;
  const ControlPulse half =
      make_rectangular_pulse(ctx.nv.rabi_max, 0.5 * ctx.nv.pi_duration());
  std::vector<double> delays;
  for (int i = 0; i < 10; ++i) delays.push_back(i * 50e-9);

  const RamseyResult a = ramsey_fringe(half, delays, ctx, 7);
  const RamseyResult b = ramsey_fringe(half, delays, ctx, 7);
  CHECK(a.counts_signal == b.counts_signal);
  CHECK(a.counts_baseline == b.counts_baseline);

  const std::vector<double> subset{delays[4]};
  const RamseyResult sub = ramsey_fringe(half, subset, ctx, 7);
  CHECK(sub.counts_signal[0] == a.counts_signal[4]);
  CHECK(sub.counts_baseline[0] == a.counts_baseline[4]);
}

} // TEST_SUITE
