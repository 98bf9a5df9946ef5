#include "nvqoc/optimizer.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "nvqoc/rng.hpp"

namespace nvqoc {

namespace {

struct BudgetExhausted {};

struct EvaluationFailure {
  std::string reason;
};

struct Vertex {
  std::vector<double> x;
  double mean = 0.0;
  int n = 0; // measurements averaged into `mean`; 0 = not yet measured
};

struct RunOutcome {
  std::vector<double> best_x;
  double best_mean = std::numeric_limits<double>::infinity();
  int best_n = 0;
  bool converged = false;
  bool aborted = false;
  std::string abort_reason;
};

class Evaluator {
 public:
  Evaluator(const FomFunction& fom, const NelderMeadConfig& config,
            const EvaluationCallback& on_eval, int superiteration,
            int& global_evaluations, double& running_best,
            std::vector<EvaluationRecord>& history)
      : fom_(fom), config_(config), on_eval_(on_eval),
        superiteration_(superiteration),
        global_evaluations_(global_evaluations), running_best_(running_best),
        history_(history) {}

  double measure(const std::vector<double>& x) {
    if (run_evaluations_ >= config_.max_evaluations) throw BudgetExhausted{};
    std::string last_error = "objective returned a non-finite value";
    const int attempts = std::max(0, config_.max_retries) + 1;
    for (int attempt = 0; attempt < attempts; ++attempt) {
      double value = 0.0;
      try {
        value = fom_(x);
      } catch (const std::exception& e) {
        last_error = e.what();
        continue;
      }
      if (!std::isfinite(value)) continue;
      ++run_evaluations_;
      ++global_evaluations_;
      ++since_reevaluation_;
      running_best_ = std::min(running_best_, value);
      history_.push_back(EvaluationRecord{global_evaluations_, superiteration_,
                                          x, value, running_best_});
      if (on_eval_) on_eval_(history_.back());
      return value;
    }
    throw EvaluationFailure{last_error};
  }

  int run_evaluations() const { return run_evaluations_; }
  int since_reevaluation() const { return since_reevaluation_; }
  void reset_reevaluation_counter() { since_reevaluation_ = 0; }

 private:
  const FomFunction& fom_;
  const NelderMeadConfig& config_;
  const EvaluationCallback& on_eval_;
  int superiteration_ = 0;
  int run_evaluations_ = 0;
  int since_reevaluation_ = 0;
  int& global_evaluations_;
  double& running_best_;
  std::vector<EvaluationRecord>& history_;
};

void validate_config(const NelderMeadConfig& config) {
  if (config.max_evaluations < 1)
    throw std::invalid_argument("max_evaluations must be at least 1");
  if (!(config.tol_f >= 0.0))
    throw std::invalid_argument("tol_f must be non-negative");
  if (!(config.initial_step_fraction > 0.0))
    throw std::invalid_argument("initial_step_fraction must be positive");
  if (!(config.alpha > 0.0) || !(config.gamma > 1.0) ||
      !(config.rho > 0.0 && config.rho < 1.0) ||
      !(config.sigma > 0.0 && config.sigma < 1.0))
    throw std::invalid_argument("simplex move coefficients out of range");
}

// Core bounded simplex loop shared by nelder_mead and the dCRAB driver.
// Appends measurements to `history` (evaluation numbers continue from
// `global_evaluations`, running minimum continues from `running_best`).
RunOutcome run_simplex(const SearchSpace& space,
                       const std::vector<double>& initial_guess,
                       const FomFunction& fom_fn,
                       const NelderMeadConfig& config,
                       const EvaluationCallback& on_eval, int superiteration,
                       int& global_evaluations, double& running_best,
                       std::vector<EvaluationRecord>& history) {
  space.validate();
  validate_config(config);
  const std::size_t dim = space.dimension();
  if (initial_guess.size() != dim)
    throw std::invalid_argument("initial guess dimension mismatch");
  if (!space.contains(initial_guess))
    throw std::invalid_argument("initial guess violates the search bounds");

  Evaluator eval(fom_fn, config, on_eval, superiteration, global_evaluations,
                 running_best, history);
  const int cadence = config.reevaluate_every == 0
                          ? 2 * (static_cast<int>(dim) + 1)
                          : config.reevaluate_every;

  // Initial simplex: one vertex per dimension offset by a fraction of the
  // bound range, stepping inward when the guess sits against the upper bound.
  std::vector<Vertex> simplex;
  simplex.reserve(dim + 1);
  simplex.push_back(Vertex{space.project(initial_guess), 0.0, 0});
  for (std::size_t i = 0; i < dim; ++i) {
    const auto& p = space.parameters[i];
    const double step = config.initial_step_fraction * (p.hi - p.lo);
    std::vector<double> x = simplex.front().x;
    x[i] += step;
    if (x[i] > p.hi) x[i] = simplex.front().x[i] - step;
    simplex.push_back(Vertex{space.project(std::move(x)), 0.0, 0});
  }

  RunOutcome outcome;
  try {
    for (auto& v : simplex) {
      v.mean = eval.measure(v.x);
      v.n = 1;
    }

    const auto by_mean = [](const Vertex& a, const Vertex& b) {
      return a.mean < b.mean;
    };
    while (true) {
      std::sort(simplex.begin(), simplex.end(), by_mean);
      const double spread = simplex.back().mean - simplex.front().mean;
      if (spread < config.tol_f) {
        outcome.converged = true;
        break;
      }
      if (eval.run_evaluations() >= config.max_evaluations) break;

      if (cadence > 0 && eval.since_reevaluation() >= cadence) {
        // Fold a fresh measurement of the incumbent into its running mean.
        Vertex& best = simplex.front();
        const double value = eval.measure(best.x);
        best.mean = (best.mean * best.n + value) / (best.n + 1);
        best.n += 1;
        eval.reset_reevaluation_counter();
        continue;
      }

      std::vector<double> centroid(dim, 0.0);
      for (std::size_t i = 0; i < dim; ++i) {
        for (std::size_t k = 0; k < dim; ++k) centroid[k] += simplex[i].x[k];
      }
      for (double& c : centroid) c /= static_cast<double>(dim);

      Vertex& worst = simplex.back();
      const double f_best = simplex.front().mean;
      const double f_second = simplex[dim - 1].mean;

      std::vector<double> reflected(dim);
      for (std::size_t k = 0; k < dim; ++k)
        reflected[k] = centroid[k] + config.alpha * (centroid[k] - worst.x[k]);
      reflected = space.project(std::move(reflected));
      const double f_reflected = eval.measure(reflected);

      if (f_reflected < f_best) {
        std::vector<double> expanded(dim);
        for (std::size_t k = 0; k < dim; ++k)
          expanded[k] = centroid[k] + config.gamma * (reflected[k] - centroid[k]);
        expanded = space.project(std::move(expanded));
        const double f_expanded = eval.measure(expanded);
        if (f_expanded < f_reflected)
          worst = Vertex{std::move(expanded), f_expanded, 1};
        else
          worst = Vertex{std::move(reflected), f_reflected, 1};
      } else if (f_reflected < f_second) {
        worst = Vertex{std::move(reflected), f_reflected, 1};
      } else {
        const bool outside = f_reflected < worst.mean;
        const std::vector<double>& toward = outside ? reflected : worst.x;
        std::vector<double> contracted(dim);
        for (std::size_t k = 0; k < dim; ++k)
          contracted[k] = centroid[k] + config.rho * (toward[k] - centroid[k]);
        contracted = space.project(std::move(contracted));
        const double f_contracted = eval.measure(contracted);
        if (f_contracted < (outside ? f_reflected : worst.mean)) {
          worst = Vertex{std::move(contracted), f_contracted, 1};
        } else {
          const std::vector<double> anchor = simplex.front().x;
          for (std::size_t i = 1; i <= dim; ++i) {
            std::vector<double> x(dim);
            for (std::size_t k = 0; k < dim; ++k)
              x[k] = anchor[k] + config.sigma * (simplex[i].x[k] - anchor[k]);
            x = space.project(std::move(x));
            // Measure before overwriting the vertex so a budget stop mid-
            // shrink leaves every vertex paired with its own measurement.
            const double f_shrunk = eval.measure(x);
            simplex[i] = Vertex{std::move(x), f_shrunk, 1};
          }
        }
      }
    }
  } catch (const BudgetExhausted&) {
    // Fall through to report the best measured vertex.
  } catch (const EvaluationFailure& failure) {
    outcome.aborted = true;
    outcome.abort_reason = failure.reason;
  }

  for (const Vertex& v : simplex) {
    if (v.n > 0 && v.mean < outcome.best_mean) {
      outcome.best_x = v.x;
      outcome.best_mean = v.mean;
      outcome.best_n = v.n;
    }
  }
  return outcome;
}

} // namespace

void SearchSpace::validate() const {
  if (parameters.empty())
    throw std::invalid_argument("search space has no parameters");
  for (const auto& p : parameters) {
    if (!(p.lo < p.hi))
      throw std::invalid_argument("parameter '" + p.name +
                                  "' needs lo < hi bounds");
    if (!std::isfinite(p.lo) || !std::isfinite(p.hi))
      throw std::invalid_argument("parameter '" + p.name +
                                  "' has non-finite bounds");
  }
  for (const auto& c : coupled) {
    if (c.parameter >= parameters.size())
      throw std::invalid_argument("coupled bound references parameter " +
                                  std::to_string(c.parameter) +
                                  " outside the space");
    if (!c.bounds)
      throw std::invalid_argument("coupled bound is missing its function");
  }
}

std::vector<double> SearchSpace::project(std::vector<double> point) const {
  if (point.size() != parameters.size())
    throw std::invalid_argument("point dimension mismatch");
  for (std::size_t i = 0; i < parameters.size(); ++i)
    point[i] = std::clamp(point[i], parameters[i].lo, parameters[i].hi);
  for (const auto& c : coupled) {
    const auto [lo_c, hi_c] = c.bounds(point);
    const double lo = std::max(lo_c, parameters[c.parameter].lo);
    const double hi = std::min(hi_c, parameters[c.parameter].hi);
    if (!(lo <= hi))
      throw std::runtime_error("coupled bound on parameter '" +
                               parameters[c.parameter].name +
                               "' has empty intersection with its box");
    point[c.parameter] = std::clamp(point[c.parameter], lo, hi);
  }
  return point;
}

bool SearchSpace::contains(const std::vector<double>& point, double tol) const {
  if (point.size() != parameters.size()) return false;
  const std::vector<double> projected = project(point);
  for (std::size_t i = 0; i < parameters.size(); ++i) {
    const double range = parameters[i].hi - parameters[i].lo;
    if (std::abs(projected[i] - point[i]) > tol * range) return false;
  }
  return true;
}

OptimizerState nelder_mead(const SearchSpace& space,
                           const std::vector<double>& initial_guess,
                           const FomFunction& fom_fn,
                           const NelderMeadConfig& config,
                           const EvaluationCallback& on_eval) {
  OptimizerState state;
  int evaluations = 0;
  double running_best = std::numeric_limits<double>::infinity();
  const RunOutcome outcome =
      run_simplex(space, initial_guess, fom_fn, config, on_eval,
                  /*superiteration=*/0, evaluations, running_best,
                  state.history);
  state.evaluations = evaluations;
  state.best_point = outcome.best_x;
  state.best_fom = outcome.best_mean;
  state.best_sample_count = outcome.best_n;
  state.converged = outcome.converged;
  state.aborted = outcome.aborted;
  state.abort_reason = outcome.abort_reason;
  return state;
}

DcrabResult dcrab_optimize(const ControlPulse& initial_guess,
                           const std::function<double(const ControlPulse&)>& fom_fn,
                           const DcrabConfig& config,
                           const EvaluationCallback& on_eval) {
  if (initial_guess.samples.empty() || initial_guess.dt <= 0.0 ||
      !initial_guess.finite())
    throw std::invalid_argument("initial pulse guess is empty or non-finite");
  if (config.n_set < 1)
    throw std::invalid_argument("n_set must be at least 1");
  if (config.max_superiterations < 1)
    throw std::invalid_argument("max_superiterations must be at least 1");
  if (config.first_superiteration < 1)
    throw std::invalid_argument("first_superiteration must be at least 1");
  if (!(config.tol_super >= 0.0))
    throw std::invalid_argument("tol_super must be non-negative");
  const double limit = config.coefficient_limit > 0.0
                           ? config.coefficient_limit
                           : config.restriction.amplitude_limit;
  if (!(limit > 0.0))
    throw std::invalid_argument("coefficient limit requires a positive "
                                "amplitude limit");
  if (!(config.restriction.amplitude_limit > 0.0))
    throw std::invalid_argument("restriction amplitude limit must be positive");

  const double t_p = initial_guess.duration();
  BasisConfig basis;
  if (config.basis_override) {
    basis = *config.basis_override;
    if (std::abs(basis.pulse_duration - t_p) > 1e-9 * t_p)
      throw std::invalid_argument("basis pulse duration does not match the "
                                  "guess duration");
  } else {
    basis = config.basis_kind == BasisKind::Fourier
                ? BasisConfig::fourier(t_p)
                : BasisConfig::sigmoid(t_p);
  }

  DcrabResult result;
  OptimizerState& state = result.state;
  ControlPulse carried_raw = initial_guess;
  double overall_best = std::numeric_limits<double>::infinity();
  double running_best = std::numeric_limits<double>::infinity();
  int evaluations = 0;
  const std::uint64_t basis_seed = derive_seed(config.seed, "dcrab-basis");

  const int last = config.first_superiteration + config.max_superiterations;
  for (int s = config.first_superiteration; s < last; ++s) {
    PulseExpansion expansion;
    expansion.initial_guess = carried_raw;
    const auto salt = static_cast<std::uint64_t>(s);
    expansion.elements[0] =
        sample_basis(basis, config.n_set, derive_seed(basis_seed, 2 * salt));
    expansion.elements[1] =
        sample_basis(basis, config.n_set, derive_seed(basis_seed, 2 * salt + 1));

    const std::size_t dim = expansion.coefficient_count();
    SearchSpace space;
    space.parameters.reserve(dim);
    for (std::size_t i = 0; i < dim; ++i)
      space.parameters.push_back(
          ParameterSpec{"A" + std::to_string(i), -limit, limit});

    const FomFunction coefficient_fom =
        [&](const std::vector<double>& coefficients) {
          const ControlPulse raw =
              evaluate_expansion(expansion, coefficients, basis);
          return fom_fn(apply_restriction(config.restriction, raw));
        };

    const RunOutcome outcome = run_simplex(
        space, std::vector<double>(dim, 0.0), coefficient_fom, config.simplex,
        on_eval, s, evaluations, running_best, state.history);
    state.superiteration = s;
    state.evaluations = evaluations;

    const double previous_best = overall_best;
    if (outcome.best_n > 0 && outcome.best_mean <= overall_best) {
      overall_best = outcome.best_mean;
      state.best_fom = outcome.best_mean;
      state.best_point = outcome.best_x;
      state.best_sample_count = outcome.best_n;
      result.best_coefficients = outcome.best_x;
      result.best_raw = evaluate_expansion(expansion, outcome.best_x, basis);
      result.best_pulse = apply_restriction(config.restriction, result.best_raw);
    }
    if (outcome.aborted) {
      state.aborted = true;
      state.abort_reason = outcome.abort_reason;
      break;
    }
    state.superiteration_best.push_back(outcome.best_mean);
    carried_raw = result.best_raw;

    if (previous_best - overall_best < config.tol_super) {
      state.converged = true;
      break;
    }
  }
  return result;
}

} // namespace nvqoc
