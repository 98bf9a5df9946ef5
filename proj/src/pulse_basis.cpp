#include "nvqoc/pulse_basis.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

#include "nvqoc/rng.hpp"
#include "nvqoc/units.hpp"

namespace nvqoc {

BasisConfig BasisConfig::fourier(double pulse_duration) {
  if (!(pulse_duration > 0.0)) {
    throw std::invalid_argument("fourier basis: pulse duration must be > 0");
  }
  BasisConfig c;
  c.kind = BasisKind::Fourier;
  c.pulse_duration = pulse_duration;
  c.fourier_omega_min = 0.0;
  c.fourier_omega_max = kTwoPi * 10.0 / pulse_duration;
  return c;
}

BasisConfig BasisConfig::sigmoid(double pulse_duration) {
  if (!(pulse_duration > 0.0)) {
    throw std::invalid_argument("sigmoid basis: pulse duration must be > 0");
  }
  BasisConfig c;
  c.kind = BasisKind::Sigmoid;
  c.pulse_duration = pulse_duration;
  c.sigmoid_sigma = pulse_duration / 20.0;
  c.sigmoid_epsilon = 4.0;
  return c;
}

double evaluate_element(const BasisElement& e, double t) {
  if (e.kind == BasisKind::Fourier) {
    return e.sub_index == 1 ? std::sin(e.omega * t) : std::cos(e.omega * t);
  }
  // (1/(sqrt(2 pi) sigma)) Int_0^t exp(-((tau-omega)/sigma)^2/2) dtau
  const double s = kSqrt2 * e.sigma;
  return 0.5 * (std::erf((t - e.omega) / s) + std::erf(e.omega / s));
}

std::vector<BasisElement> sample_basis(const BasisConfig& config, int n_set,
                                       std::uint64_t seed) {
  if (n_set < 1) {
    throw std::invalid_argument("sample_basis: n_set must be >= 1");
  }
  double lo = 0.0;
  double hi = 0.0;
  if (config.kind == BasisKind::Fourier) {
    lo = config.fourier_omega_min;
    hi = config.fourier_omega_max;
  } else {
    lo = config.sigmoid_epsilon * config.sigmoid_sigma;
    hi = config.pulse_duration - config.sigmoid_epsilon * config.sigmoid_sigma;
  }
  if (!(lo < hi)) {
    throw std::invalid_argument("sample_basis: empty superparameter interval");
  }

  auto rng = make_rng(seed);
  std::uniform_real_distribution<double> draw(lo, hi);
  std::vector<BasisElement> out;
  if (config.kind == BasisKind::Fourier) {
    out.reserve(2 * static_cast<std::size_t>(n_set));
    for (int n = 0; n < n_set; ++n) {
      const double omega = draw(rng);
      out.push_back({BasisKind::Fourier, omega, 1, 0.0});
      out.push_back({BasisKind::Fourier, omega, 2, 0.0});
    }
  } else {
    out.reserve(static_cast<std::size_t>(n_set) + 1);
    // Anchored rising edge right at the start of the admissible interval.
    out.push_back({BasisKind::Sigmoid, lo, 1, config.sigmoid_sigma});
    for (int n = 0; n < n_set; ++n) {
      out.push_back({BasisKind::Sigmoid, draw(rng), 1, config.sigmoid_sigma});
    }
  }
  return out;
}

ControlPulse evaluate_expansion(const PulseExpansion& expansion,
                                const std::vector<double>& coefficients,
                                const BasisConfig& config) {
  if (coefficients.size() != expansion.coefficient_count()) {
    throw std::invalid_argument(
        "evaluate_expansion: coefficient count does not match element count");
  }
  ControlPulse out = expansion.initial_guess;
  const double dt = out.dt;
  const double t_p = out.duration();

  std::size_t offset = 0;
  for (int ch = 0; ch < 2; ++ch) {
    const auto& elems = expansion.elements[ch];
    if (elems.empty()) continue;

    double coeff_sum = 0.0;
    for (std::size_t j = 0; j < elems.size(); ++j) {
      coeff_sum += coefficients[offset + j];
    }
    const bool sigmoid = config.kind == BasisKind::Sigmoid;
    BasisElement closing{BasisKind::Sigmoid,
                         t_p - config.sigmoid_epsilon * config.sigmoid_sigma, 1,
                         config.sigmoid_sigma};

    for (std::size_t k = 0; k < out.samples.size(); ++k) {
      const double t = (static_cast<double>(k) + 0.5) * dt;
      double v = 0.0;
      for (std::size_t j = 0; j < elems.size(); ++j) {
        v += coefficients[offset + j] * evaluate_element(elems[j], t);
      }
      if (sigmoid) {
        // Falling edge carrying the summed weight: the channel contribution
        // cancels exactly at t = t_p by erf symmetry.
        v -= coeff_sum * evaluate_element(closing, t);
      }
      double& target = ch == 0 ? out.samples[k].u1 : out.samples[k].u2;
      target += v;
    }
    offset += elems.size();
  }
  return out;
}

namespace {

// Window on the normalized coordinate x in [0, 1]; reflection makes both
// shoulders share one code path so x = 0 and x = 1 give exactly 0.
double window_normalized(double x, double edge_fraction,
                         double sigma_fraction) {
  const double xx = std::min(x, 1.0 - x);
  if (xx >= edge_fraction) return 1.0;
  if (xx <= 0.0) return 0.0;
  const double z = (edge_fraction - xx) / sigma_fraction;
  const double z0 = edge_fraction / sigma_fraction;
  const double g = std::exp(-0.5 * z * z);
  const double g0 = std::exp(-0.5 * z0 * z0);
  // Rescale the shoulder so the window hits exactly 0 at the endpoints.
  return (g - g0) / (1.0 - g0);
}

} // namespace

double flat_top_window(double t, double t_p, double edge_fraction,
                       double sigma_fraction) {
  return window_normalized(t / t_p, edge_fraction, sigma_fraction);
}

ControlPulse apply_restriction(const RestrictionPolicy& policy,
                               const ControlPulse& raw) {
  if (!(policy.amplitude_limit > 0.0)) {
    throw std::invalid_argument("apply_restriction: amplitude limit must be > 0");
  }
  if (raw.samples.empty()) {
    throw std::invalid_argument("apply_restriction: empty pulse");
  }
  const double a_max = policy.amplitude_limit;
  ControlPulse out = raw;

  if (policy.mode == RestrictionMode::CutOff) {
    for (auto& s : out.samples) {
      s.u1 = std::clamp(s.u1, -a_max, a_max);
      s.u2 = std::clamp(s.u2, -a_max, a_max);
    }
  } else {
    const std::size_t n = out.samples.size();
    for (int ch = 0; ch < 2; ++ch) {
      double lo = ch == 0 ? out.samples.front().u1 : out.samples.front().u2;
      double hi = lo;
      for (const auto& s : out.samples) {
        const double v = ch == 0 ? s.u1 : s.u2;
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
      // Rescale only a channel that exceeds its limits; in-range channels
      // pass through so the map is the identity on admissible waveforms.
      if (lo < -a_max || hi > a_max) {
        const double span = hi - lo;
        for (auto& s : out.samples) {
          double& v = ch == 0 ? s.u1 : s.u2;
          v = span > 0.0 ? -a_max + 2.0 * a_max * (v - lo) / span
                         : std::clamp(v, -a_max, a_max);
        }
      }
    }
    // Window parametrized by sample index so the first and last samples are
    // exactly zero regardless of the underlying time grid.
    for (std::size_t k = 0; k < n; ++k) {
      const double x =
          n > 1 ? static_cast<double>(k) / static_cast<double>(n - 1) : 0.0;
      const double w = window_normalized(x, policy.window_edge_fraction,
                                         policy.window_sigma_fraction);
      out.samples[k].u1 *= w;
      out.samples[k].u2 *= w;
    }
  }

  // Physical drive cap: the I/Q magnitude can exceed A_max even with both
  // channels individually in range, so trim radially. The relative guard
  // keeps the cap idempotent against last-bit rounding of the rescale.
  for (auto& s : out.samples) {
    const double m = s.magnitude();
    if (m > a_max * (1.0 + 1e-12)) {
      const double scale = a_max / m;
      s.u1 *= scale;
      s.u2 *= scale;
    }
  }
  return out;
}

} // namespace nvqoc
