#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <random>
#include <stdexcept>
#include <utility>
#include <vector>

#include "doctest.h"
#include "nvqoc/optimizer.hpp"
#include "nvqoc/spin_dynamics.hpp"
#include "nvqoc/units.hpp"

using namespace nvqoc;

namespace {

double sq(double v) { return v * v; }

SearchSpace interval(double lo, double hi) {
  SearchSpace s;
  s.parameters = {{"x", lo, hi}};
  return s;
}

double bowl(const std::vector<double>& x) { return sq(x[0] - 3.0); }

// Length plus a window confined to a fraction of it.
SearchSpace coupled_pair() {
  SearchSpace s;
  s.parameters = {{"length", 1.0, 10.0}, {"window", 0.0, 10.0}};
  s.coupled.push_back(
      {1, [](const std::vector<double>& p) {
         return std::pair<double, double>{0.25 * p[0], 0.75 * p[0]};
       }});
  return s;
}

void check_running_best_non_increasing(const OptimizerState& state) {
  for (std::size_t i = 1; i < state.history.size(); ++i) {
    CHECK(state.history[i].best_fom <= state.history[i - 1].best_fom);
  }
}

double independent_infidelity(const RwaHamiltonianParams& system,
                              const ControlPulse& pulse) {
  return 1.0 - transfer_probability(propagate(system, pulse));
}

} // namespace

TEST_CASE("search space validates bounds and coupled constraints") {
  SearchSpace empty;
  CHECK_THROWS_AS(empty.validate(), std::invalid_argument);

  SearchSpace flipped = interval(2.0, 2.0);
  CHECK_THROWS_AS(flipped.validate(), std::invalid_argument);

  SearchSpace bad_index = interval(0.0, 1.0);
  bad_index.coupled.push_back({5, [](const std::vector<double>&) {
                                 return std::pair<double, double>{0.0, 1.0};
                               }});
  CHECK_THROWS_AS(bad_index.validate(), std::invalid_argument);

  SearchSpace no_function = interval(0.0, 1.0);
  no_function.coupled.push_back({0, nullptr});
  CHECK_THROWS_AS(no_function.validate(), std::invalid_argument);

  CHECK_NOTHROW(coupled_pair().validate());
}

TEST_CASE("projection clamps to the boxes and then the coupled intervals") {
  const SearchSpace s = coupled_pair();

  const auto inside = s.project({4.0, 2.0});
  CHECK(inside[0] == 4.0);
  CHECK(inside[1] == 2.0);

  // Static clamp first (length 20 -> 10), then window 9 -> 0.75 * 10.
  const auto clamped = s.project({20.0, 9.0});
  CHECK(clamped[0] == 10.0);
  CHECK(clamped[1] == 7.5);

  const auto lifted = s.project({8.0, 0.5});
  CHECK(lifted[1] == 2.0);

  CHECK(s.contains({4.0, 2.0}));
  CHECK_FALSE(s.contains({4.0, 0.5}));
  CHECK_FALSE(s.contains({4.0}));

  SearchSpace impossible;
  impossible.parameters = {{"x", 0.0, 1.0}, {"y", 0.0, 1.0}};
  impossible.coupled.push_back(
      {1, [](const std::vector<double>& p) {
         return std::pair<double, double>{p[0] + 5.0, p[0] + 6.0};
       }});
  CHECK_THROWS_AS(impossible.project({0.5, 0.5}), std::runtime_error);
}

TEST_CASE("quadratic bowl converges to its minimum within 1e-4") {
  NelderMeadConfig config;
  config.max_evaluations = 200;
  config.tol_f = 1e-12;
  const OptimizerState state =
      nelder_mead(interval(0.0, 10.0), {9.0}, bowl, config);

  REQUIRE_FALSE(state.aborted);
  CHECK(state.converged);
  REQUIRE(state.best_point.size() == 1);
  CHECK(std::abs(state.best_point[0] - 3.0) < 1e-4);
  CHECK(state.best_fom < 1e-8);
  CHECK(state.evaluations <= config.max_evaluations);
  CHECK(state.evaluations == static_cast<int>(state.history.size()));
  check_running_best_non_increasing(state);
  // Noiseless: the averaged estimate coincides with the running minimum.
  CHECK(state.best_fom ==
        doctest::Approx(state.history.back().best_fom).epsilon(1e-12));
}

TEST_CASE("every evaluated point satisfies the coupled constraint") {
  const SearchSpace space = coupled_pair();
  const auto objective = [](const std::vector<double>& p) {
    return sq(p[0] - 4.0) + sq(p[1] - 2.0);
  };
  NelderMeadConfig config;
  config.max_evaluations = 400;
  config.tol_f = 1e-12;

  std::vector<EvaluationRecord> streamed;
  const OptimizerState state = nelder_mead(
      space, {8.0, 3.0}, objective, config,
      [&](const EvaluationRecord& r) { streamed.push_back(r); });

  REQUIRE_FALSE(state.aborted);
  REQUIRE(state.history.size() == streamed.size());
  for (std::size_t i = 0; i < streamed.size(); ++i) {
    CHECK(streamed[i].evaluation == static_cast<int>(i) + 1);
    CHECK(streamed[i].fom == state.history[i].fom);
    const double x = streamed[i].point[0];
    const double y = streamed[i].point[1];
    CHECK(x >= 1.0);
    CHECK(x <= 10.0);
    CHECK(y >= 0.25 * x);
    CHECK(y <= 0.75 * x);
  }
  CHECK(std::abs(state.best_point[0] - 4.0) < 1e-3);
  CHECK(std::abs(state.best_point[1] - 2.0) < 1e-3);
}

TEST_CASE("an optimum outside the box is reached on the boundary") {
  NelderMeadConfig config;
  config.max_evaluations = 300;
  config.tol_f = 1e-12;
  const OptimizerState state = nelder_mead(
      interval(0.0, 10.0), {6.0},
      [](const std::vector<double>& x) { return sq(x[0] + 5.0); }, config);

  REQUIRE_FALSE(state.aborted);
  CHECK(state.best_point[0] >= 0.0);
  CHECK(state.best_point[0] <= 1e-6);
  for (const auto& r : state.history) {
    CHECK(r.point[0] >= 0.0);
    CHECK(r.point[0] <= 10.0);
  }
}

TEST_CASE("incumbent re-measurement cadence averages repeat samples") {
  NelderMeadConfig config;
  config.max_evaluations = 60;
  config.tol_f = 0.0; // never converge; run the full budget
  config.reevaluate_every = 3;
  const OptimizerState state =
      nelder_mead(interval(0.0, 10.0), {9.0}, bowl, config);
  CHECK(state.evaluations == 60);
  CHECK(state.best_sample_count >= 2);

  NelderMeadConfig off = config;
  off.reevaluate_every = -1;
  const OptimizerState single =
      nelder_mead(interval(0.0, 10.0), {9.0}, bowl, off);
  CHECK(single.best_sample_count == 1);
}

TEST_CASE("noisy bowl with re-evaluation lands within the averaged noise") {
  const double sigma = 0.05;
  const auto make_noisy = [sigma](std::uint64_t seed) {
    auto rng = std::make_shared<std::mt19937_64>(seed);
    return [rng, sigma](const std::vector<double>& x) {
      std::normal_distribution<double> noise(0.0, sigma);
      return sq(x[0] - 3.0) + noise(*rng);
    };
  };
  NelderMeadConfig config;
  config.max_evaluations = 300;
  config.tol_f = 1e-6; // noise keeps the spread high; budget-bound

  const OptimizerState state =
      nelder_mead(interval(0.0, 10.0), {9.0}, make_noisy(77), config);
  REQUIRE_FALSE(state.aborted);
  CHECK(state.best_sample_count >= 2);
  const double true_value = sq(state.best_point[0] - 3.0);
  CHECK(true_value <=
        3.0 * sigma / std::sqrt(static_cast<double>(state.best_sample_count)));

  // The averaged-noise bound holds across independent noise streams.
  int within = 0;
  const int trials = 20;
  for (int t = 0; t < trials; ++t) {
    const OptimizerState s = nelder_mead(interval(0.0, 10.0), {9.0},
                                         make_noisy(1000 + t), config);
    const double value = sq(s.best_point[0] - 3.0);
    const double bound =
        3.0 * sigma / std::sqrt(static_cast<double>(s.best_sample_count));
    if (value <= bound) ++within;
  }
  CHECK(within >= 16);

  // Deterministic given the seed: an identical rerun reproduces everything.
  const OptimizerState rerun =
      nelder_mead(interval(0.0, 10.0), {9.0}, make_noisy(77), config);
  REQUIRE(rerun.history.size() == state.history.size());
  for (std::size_t i = 0; i < state.history.size(); ++i) {
    CHECK(rerun.history[i].fom == state.history[i].fom);
    CHECK(rerun.history[i].point == state.history[i].point);
  }
  CHECK(rerun.best_fom == state.best_fom);
}

TEST_CASE("objective failures are retried and eventually abort") {
  SUBCASE("transient failures are retried transparently") {
    int calls = 0;
    int failures = 0;
    const auto flaky = [&](const std::vector<double>& x) -> double {
      ++calls;
      if (calls % 5 == 0) {
        ++failures;
        throw std::runtime_error("transient");
      }
      return bowl(x);
    };
    NelderMeadConfig config;
    config.max_evaluations = 120;
    config.tol_f = 1e-10;
    const OptimizerState state =
        nelder_mead(interval(0.0, 10.0), {9.0}, flaky, config);
    CHECK(failures > 0);
    CHECK_FALSE(state.aborted);
    CHECK(state.converged);
    CHECK(std::abs(state.best_point[0] - 3.0) < 1e-3);
  }

  SUBCASE("a persistent failure aborts with the partial state preserved") {
    int successes = 0;
    const auto failing = [&](const std::vector<double>& x) -> double {
      if (successes >= 10) throw std::runtime_error("hardware lost");
      ++successes;
      return bowl(x);
    };
    NelderMeadConfig config;
    config.max_evaluations = 200;
    const OptimizerState state =
        nelder_mead(interval(0.0, 10.0), {9.0}, failing, config);
    CHECK(state.aborted);
    CHECK(state.abort_reason == "hardware lost");
    CHECK(state.evaluations == 10);
    CHECK(state.history.size() == 10);
    CHECK(state.best_sample_count >= 1);
    CHECK(std::isfinite(state.best_fom));
    check_running_best_non_increasing(state);
  }

  SUBCASE("failure on the very first evaluation leaves an empty best") {
    const auto dead = [](const std::vector<double>&) -> double {
      throw std::runtime_error("no signal");
    };
    const OptimizerState state =
        nelder_mead(interval(0.0, 10.0), {9.0}, dead, NelderMeadConfig{});
    CHECK(state.aborted);
    CHECK(state.abort_reason == "no signal");
    CHECK(state.evaluations == 0);
    CHECK(state.history.empty());
    CHECK(state.best_point.empty());
    CHECK(state.best_sample_count == 0);
    CHECK(std::isinf(state.best_fom));
  }

  SUBCASE("a non-finite objective value counts as a failure") {
    const auto nan_objective = [](const std::vector<double>&) {
      return std::numeric_limits<double>::quiet_NaN();
    };
    const OptimizerState state = nelder_mead(interval(0.0, 10.0), {9.0},
                                             nan_objective, NelderMeadConfig{});
    CHECK(state.aborted);
    CHECK(state.history.empty());
  }
}

TEST_CASE("the initial guess must satisfy the bounds") {
  CHECK_THROWS_AS(nelder_mead(interval(0.0, 10.0), {11.0}, bowl),
                  std::invalid_argument);
  CHECK_THROWS_AS(nelder_mead(interval(0.0, 10.0), {9.0, 1.0}, bowl),
                  std::invalid_argument);
  // Violates the coupled interval [2, 6] at length 8.
  CHECK_THROWS_AS(nelder_mead(coupled_pair(), {8.0, 1.0},
                              [](const std::vector<double>& p) {
                                return p[0] + p[1];
                              }),
                  std::invalid_argument);
}

TEST_CASE("dcrab corrects a rectangular inversion pulse against detuning") {
  const double rabi = kTwoPi * 15.0e6;
  const double cap = kTwoPi * 25.0e6;
  // The drive sits 20% of the Rabi rate off resonance; the rectangular
  // guess was designed for resonance.
  const RwaHamiltonianParams system{0.2 * rabi, cap};
  const ControlPulse guess = make_rectangular_pulse(rabi, kPi / rabi);

  double max_magnitude = 0.0;
  const auto infidelity = [&](const ControlPulse& p) {
    for (const auto& s : p.samples)
      max_magnitude = std::max(max_magnitude, s.magnitude());
    return independent_infidelity(system, p);
  };

  CHECK(infidelity(guess) > 0.03);

  DcrabConfig config;
  config.n_set = 4;
  config.max_superiterations = 10;
  config.restriction.amplitude_limit = cap;
  config.simplex.max_evaluations = 700;
  config.simplex.tol_f = 1e-9;
  config.tol_super = 1e-5;
  config.seed = 0x5eedf00dULL;

  const DcrabResult result = dcrab_optimize(guess, infidelity, config);
  REQUIRE_FALSE(result.state.aborted);

  // End-to-end: re-propagate the returned pulse independently.
  const double final_infidelity =
      independent_infidelity(system, result.best_pulse);
  CHECK(final_infidelity < 1e-3);
  CHECK(result.state.superiteration <= 10);
  CHECK(result.state.best_fom ==
        doctest::Approx(final_infidelity).epsilon(1e-12));

  // Every evaluated pulse respected the drive cap.
  CHECK(max_magnitude <= cap * (1.0 + 1e-9));

  // The per-superiteration trace never rises (noiseless carryover).
  const auto& trace = result.state.superiteration_best;
  REQUIRE_FALSE(trace.empty());
  for (std::size_t i = 1; i < trace.size(); ++i)
    CHECK(trace[i] <= trace[i - 1] + 1e-12);
  check_running_best_non_increasing(result.state);
  CHECK(result.state.evaluations ==
        static_cast<int>(result.state.history.size()));
}

TEST_CASE("an already optimal pulse is a fixed point of dcrab") {
  const double rabi = kTwoPi * 20.0e6;
  const RwaHamiltonianParams system{0.0, rabi};
  const ControlPulse ideal = make_rectangular_pulse(rabi, kPi / rabi);
  const auto infidelity = [&](const ControlPulse& p) {
    return independent_infidelity(system, p);
  };
  REQUIRE(infidelity(ideal) < 1e-12);

  DcrabConfig config;
  config.n_set = 3;
  config.max_superiterations = 5;
  config.restriction.amplitude_limit = rabi;
  config.simplex.max_evaluations = 300;
  config.simplex.tol_f = 1e-6;
  config.tol_super = 1e-3;
  config.seed = 11;

  const DcrabResult result = dcrab_optimize(ideal, infidelity, config);
  REQUIRE_FALSE(result.state.aborted);
  CHECK(result.state.best_fom <= 1e-12);
  for (const double b : result.state.superiteration_best)
    CHECK(b <= config.simplex.tol_f);
  // The second superiteration cannot improve on 0, so the loop stops there.
  CHECK(result.state.converged);
  CHECK(result.state.superiteration == 2);
}

TEST_CASE("zero-coefficient carryover reproduces the previous best exactly") {
  const double rabi = kTwoPi * 15.0e6;
  const double cap = kTwoPi * 25.0e6;
  const RwaHamiltonianParams system{0.2 * rabi, cap};
  const ControlPulse guess = make_rectangular_pulse(rabi, kPi / rabi);
  const auto infidelity = [&](const ControlPulse& p) {
    return independent_infidelity(system, p);
  };

  DcrabConfig config;
  config.n_set = 2;
  config.max_superiterations = 3;
  config.restriction.amplitude_limit = cap;
  config.simplex.max_evaluations = 150;
  config.simplex.tol_f = 1e-10;
  config.tol_super = 0.0; // never stop early; run all superiterations
  config.seed = 42;

  const DcrabResult result = dcrab_optimize(guess, infidelity, config);
  REQUIRE_FALSE(result.state.aborted);
  REQUIRE(result.state.superiteration_best.size() == 3);

  for (int s = 2; s <= 3; ++s) {
    double first_of_next = std::numeric_limits<double>::quiet_NaN();
    double best_of_previous = std::numeric_limits<double>::infinity();
    for (const auto& r : result.state.history) {
      if (r.superiteration == s && std::isnan(first_of_next))
        first_of_next = r.fom;
      if (r.superiteration == s - 1)
        best_of_previous = std::min(best_of_previous, r.fom);
    }
    REQUIRE_FALSE(std::isnan(first_of_next));
    // Exact: the carried waveform is re-evaluated bit-identically.
    CHECK(first_of_next == best_of_previous);
  }

  // Evaluation numbering is cumulative and gap-free across superiterations.
  for (std::size_t i = 0; i < result.state.history.size(); ++i)
    CHECK(result.state.history[i].evaluation == static_cast<int>(i) + 1);
}

TEST_CASE("a fixed master seed makes the dcrab trajectory bit-reproducible") {
  const double rabi = kTwoPi * 15.0e6;
  const double cap = kTwoPi * 25.0e6;
  const RwaHamiltonianParams system{0.2 * rabi, cap};
  const ControlPulse guess = make_rectangular_pulse(rabi, kPi / rabi);
  const auto infidelity = [&](const ControlPulse& p) {
    return independent_infidelity(system, p);
  };

  DcrabConfig config;
  config.n_set = 3;
  config.max_superiterations = 2;
  config.restriction.amplitude_limit = cap;
  config.simplex.max_evaluations = 200;
  config.simplex.tol_f = 1e-9;
  config.tol_super = 0.0;
  config.seed = 987654321;

  const DcrabResult a = dcrab_optimize(guess, infidelity, config);
  const DcrabResult b = dcrab_optimize(guess, infidelity, config);

  REQUIRE(a.state.history.size() == b.state.history.size());
  for (std::size_t i = 0; i < a.state.history.size(); ++i) {
    CHECK(a.state.history[i].evaluation == b.state.history[i].evaluation);
    CHECK(a.state.history[i].superiteration ==
          b.state.history[i].superiteration);
    CHECK(a.state.history[i].fom == b.state.history[i].fom);
    CHECK(a.state.history[i].point == b.state.history[i].point);
  }
  CHECK(a.state.superiteration_best == b.state.superiteration_best);
  CHECK(a.best_coefficients == b.best_coefficients);
  REQUIRE(a.best_pulse.samples.size() == b.best_pulse.samples.size());
  for (std::size_t k = 0; k < a.best_pulse.samples.size(); ++k) {
    CHECK(a.best_pulse.samples[k].u1 == b.best_pulse.samples[k].u1);
    CHECK(a.best_pulse.samples[k].u2 == b.best_pulse.samples[k].u2);
  }
}

TEST_CASE("dcrab rejects invalid configurations") {
  const double rabi = kTwoPi * 20.0e6;
  const ControlPulse guess = make_rectangular_pulse(rabi, kPi / rabi);
  const auto objective = [](const ControlPulse&) { return 1.0; };

  DcrabConfig good;
  good.restriction.amplitude_limit = rabi;

  DcrabConfig bad = good;
  bad.n_set = 0;
  CHECK_THROWS_AS(dcrab_optimize(guess, objective, bad), std::invalid_argument);

  bad = good;
  bad.restriction.amplitude_limit = 0.0;
  CHECK_THROWS_AS(dcrab_optimize(guess, objective, bad), std::invalid_argument);

  bad = good;
  bad.first_superiteration = 0;
  CHECK_THROWS_AS(dcrab_optimize(guess, objective, bad), std::invalid_argument);

  bad = good;
  bad.basis_override = BasisConfig::fourier(2.0 * guess.duration());
  CHECK_THROWS_AS(dcrab_optimize(guess, objective, bad), std::invalid_argument);

  CHECK_THROWS_AS(dcrab_optimize(ControlPulse{}, objective, good),
                  std::invalid_argument);
}
