#include "nvqoc/curve_fit.hpp"

#include <unsupported/Eigen/LevenbergMarquardt>
#include <unsupported/Eigen/NumericalDiff>

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace nvqoc {

namespace {

struct ResidualFunctor : Eigen::DenseFunctor<double> {
  const ResidualFunction* fn;

  ResidualFunctor(const ResidualFunction& f, int parameter_count,
                  int residual_count)
      : Eigen::DenseFunctor<double>(parameter_count, residual_count), fn(&f) {}

  int operator()(const InputType& x, ValueType& fvec) const {
    (*fn)(x, fvec);
    return 0;
  }
};

bool status_converged(int status) {
  using namespace Eigen::LevenbergMarquardtSpace;
  switch (status) {
    case RelativeReductionTooSmall:
    case RelativeErrorTooSmall:
    case RelativeErrorAndReductionTooSmall:
    case CosinusTooSmall:
    // Tolerances below machine resolution: the iterate stopped moving, which
    // is convergence for our purposes.
    case FtolTooSmall:
    case XtolTooSmall:
    case GtolTooSmall:
      return true;
    default:
      return false;
  }
}

} // namespace

CurveFitResult fit_least_squares(const ResidualFunction& residual_fn,
                                 int residual_count,
                                 const Eigen::VectorXd& initial_guess,
                                 const CurveFitOptions& options) {
  if (!residual_fn)
    throw std::invalid_argument("fit_least_squares: missing residual function");
  const int p = static_cast<int>(initial_guess.size());
  const int n = residual_count;
  if (p < 1) throw std::invalid_argument("fit_least_squares: no parameters");
  if (n < p)
    throw std::invalid_argument(
        "fit_least_squares: need at least as many residuals as parameters");

  ResidualFunctor functor(residual_fn, p, n);
  Eigen::NumericalDiff<ResidualFunctor, Eigen::Central> differentiable(functor);
  Eigen::LevenbergMarquardt<Eigen::NumericalDiff<ResidualFunctor, Eigen::Central>>
      lm(differentiable);
  lm.setMaxfev(options.max_function_evaluations);
  lm.setFtol(options.ftol);
  lm.setXtol(options.xtol);

  Eigen::VectorXd x = initial_guess;
  const auto status = lm.minimize(x);

  CurveFitResult out;
  out.parameters = x;
  out.status = static_cast<int>(status);
  out.converged = status_converged(out.status);

  Eigen::VectorXd r(n);
  residual_fn(x, r);
  out.residual_norm = r.norm();

  // Central-difference Jacobian at the solution for the covariance and the
  // first-order optimality check; cbrt(eps)-sized steps balance truncation
  // against roundoff for order-1 parameters.
  Eigen::MatrixXd jacobian(n, p);
  Eigen::VectorXd plus(n), minus(n), probe = x;
  for (int j = 0; j < p; ++j) {
    const double h = 6e-6 * std::max(std::abs(x[j]), 1.0);
    probe[j] = x[j] + h;
    residual_fn(probe, plus);
    probe[j] = x[j] - h;
    residual_fn(probe, minus);
    probe[j] = x[j];
    jacobian.col(j) = (plus - minus) / (2.0 * h);
  }
  out.gradient_norm = (jacobian.transpose() * r).lpNorm<Eigen::Infinity>();

  const double dof = static_cast<double>(std::max(1, n - p));
  const double variance = r.squaredNorm() / dof;
  const Eigen::MatrixXd jtj = jacobian.transpose() * jacobian;
  out.covariance =
      variance * jtj.completeOrthogonalDecomposition().pseudoInverse();
  out.standard_errors = out.covariance.diagonal().cwiseMax(0.0).cwiseSqrt();
  return out;
}

CurveFitResult fit_least_squares(const ResidualFunction& residual_fn,
                                 int residual_count,
                                 const std::vector<Eigen::VectorXd>& starts,
                                 const CurveFitOptions& options) {
  if (starts.empty())
    throw std::invalid_argument("fit_least_squares: no starting points");
  CurveFitResult best;
  bool have = false;
  for (const auto& start : starts) {
    const CurveFitResult candidate =
        fit_least_squares(residual_fn, residual_count, start, options);
    const bool better =
        !have ||
        (candidate.converged && !best.converged) ||
        (candidate.converged == best.converged &&
         candidate.residual_norm < best.residual_norm);
    if (better) {
      best = candidate;
      have = true;
    }
  }
  return best;
}

} // namespace nvqoc
