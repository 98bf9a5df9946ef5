#include "nvqoc/nv_model.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>

namespace nvqoc {

HyperfineModel HyperfineModel::nitrogen14(double t2_star) {
  const double split = kTwoPi * 2.16e6;
  HyperfineModel model;
  model.offsets = {-split, 0.0, split};
  model.weights = {1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0};
  model.t2_star = t2_star;
  return model;
}

HyperfineModel HyperfineModel::single_line() {
  HyperfineModel model;
  model.offsets = {0.0};
  model.weights = {1.0};
  model.t2_star = 1.0e3; // effectively dephasing-free
  return model;
}

void HyperfineModel::validate() const {
  if (offsets.empty() || offsets.size() != weights.size()) {
    throw std::invalid_argument(
        "HyperfineModel: offsets and weights must be nonempty and same size");
  }
  double sum = 0.0;
  for (const double w : weights) {
    if (!(w >= 0.0)) {
      throw std::invalid_argument("HyperfineModel: negative weight");
    }
    sum += w;
  }
  if (std::abs(sum - 1.0) > 1e-9) {
    throw std::invalid_argument("HyperfineModel: weights must sum to 1");
  }
  if (!(t2_star > 0.0)) {
    throw std::invalid_argument("HyperfineModel: T2* must be positive");
  }
  if (decay_order != 1.0 && decay_order != 2.0) {
    throw std::invalid_argument(
        "HyperfineModel: decay order must be 1 (Lorentzian) or 2 (Gaussian)");
  }
}

} // namespace nvqoc
