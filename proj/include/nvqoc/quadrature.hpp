#pragma once

#include <vector>

namespace nvqoc {

struct QuadratureRule {
  std::vector<double> nodes;
  std::vector<double> weights;
};

// Gauss-Hermite rule: sum_i w_i f(x_i) approximates
// integral exp(-x^2) f(x) dx over the real line, exact for polynomials of
// degree < 2n. Throws std::invalid_argument for n < 1.
QuadratureRule gauss_hermite(int n);

// Gauss-Legendre rule on [-1, 1], exact for polynomials of degree < 2n.
QuadratureRule gauss_legendre(int n);

} // namespace nvqoc
