#pragma once

#include <Eigen/Dense>

#include <functional>
#include <vector>

namespace nvqoc {

// Fills `residuals` (size fixed by the fit) for the given parameter vector.
// Callers fold per-point weights into the residuals (r_i = (model - y_i)/s_i).
using ResidualFunction =
    std::function<void(const Eigen::VectorXd&, Eigen::VectorXd&)>;

struct CurveFitOptions {
  int max_function_evaluations = 2000;
  double ftol = 1e-12;
  double xtol = 1e-12;
};

struct CurveFitResult {
  Eigen::VectorXd parameters;
  // sigma_hat^2 (J^T J)^+ with sigma_hat^2 = ||r||^2/(n - p); exact
  // measurement weights make sigma_hat^2 ~ 1 so this estimates the
  // parameter covariance.
  Eigen::MatrixXd covariance;
  Eigen::VectorXd standard_errors; // sqrt of the covariance diagonal
  double residual_norm = 0.0;      // ||r||_2 at the solution
  double gradient_norm = 0.0;      // ||J^T r||_inf; first-order optimality
  bool converged = false;
  int status = 0; // backend status code, for diagnostics
};

// Damped (Levenberg-Marquardt) least squares with finite-difference
// derivatives. Parameters should be pre-scaled to order 1 — the internal
// difference steps are relative and degrade on wildly scaled inputs.
// Throws std::invalid_argument on a missing function, empty parameter
// vector, or fewer residuals than parameters.
CurveFitResult fit_least_squares(const ResidualFunction& residual_fn,
                                 int residual_count,
                                 const Eigen::VectorXd& initial_guess,
                                 const CurveFitOptions& options = {});

// Multi-start variant: runs every start and keeps the best outcome,
// preferring converged fits and breaking ties by residual norm.
CurveFitResult fit_least_squares(const ResidualFunction& residual_fn,
                                 int residual_count,
                                 const std::vector<Eigen::VectorXd>& starts,
                                 const CurveFitOptions& options = {});

} // namespace nvqoc
