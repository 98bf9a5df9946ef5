#include "nvqoc/quadrature.hpp"

#include <cmath>
#include <stdexcept>

#include <Eigen/Dense>

#include "nvqoc/units.hpp"

namespace nvqoc {

namespace {

// Golub-Welsch: nodes are eigenvalues of the symmetric tridiagonal Jacobi
// matrix of the orthogonal-polynomial recurrence; weights follow from the
// first component of each normalized eigenvector times the total measure.
QuadratureRule from_jacobi(const Eigen::VectorXd& off_diagonal,
                           double total_measure) {
  const int n = static_cast<int>(off_diagonal.size()) + 1;
  Eigen::MatrixXd jacobi = Eigen::MatrixXd::Zero(n, n);
  for (int k = 0; k + 1 < n; ++k) {
    jacobi(k, k + 1) = off_diagonal(k);
    jacobi(k + 1, k) = off_diagonal(k);
  }
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(jacobi);
  QuadratureRule rule;
  rule.nodes.resize(n);
  rule.weights.resize(n);
  for (int i = 0; i < n; ++i) {
    rule.nodes[i] = solver.eigenvalues()(i);
    const double first = solver.eigenvectors()(0, i);
    rule.weights[i] = total_measure * first * first;
  }
  return rule;
}

} // namespace

QuadratureRule gauss_hermite(int n) {
  if (n < 1) {
    throw std::invalid_argument("gauss_hermite: need at least one node");
  }
  Eigen::VectorXd beta(n - 1);
  for (int k = 1; k < n; ++k) {
    beta(k - 1) = std::sqrt(0.5 * k);
  }
  return from_jacobi(beta, std::sqrt(kPi));
}

QuadratureRule gauss_legendre(int n) {
  if (n < 1) {
    throw std::invalid_argument("gauss_legendre: need at least one node");
  }
  Eigen::VectorXd beta(n - 1);
  for (int k = 1; k < n; ++k) {
    beta(k - 1) = k / std::sqrt(4.0 * k * k - 1.0);
  }
  return from_jacobi(beta, 2.0);
}

} // namespace nvqoc
