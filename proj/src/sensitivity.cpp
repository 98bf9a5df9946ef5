#include "nvqoc/sensitivity.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "nvqoc/curve_fit.hpp"

namespace nvqoc {

namespace {

double median(std::vector<double> values) {
  const std::size_t mid = values.size() / 2;
  std::nth_element(values.begin(), values.begin() + mid, values.end());
  return values[mid];
}

void check_weighted_series(const std::vector<double>& axis,
                           const std::vector<double>& values,
                           const std::vector<double>& sigmas,
                           std::size_t minimum_points, const char* what) {
  if (axis.size() != values.size())
    throw std::invalid_argument(std::string(what) +
                                ": axis and data lengths differ");
  if (axis.size() < minimum_points)
    throw std::invalid_argument(std::string(what) + ": too few points");
  if (!sigmas.empty()) {
    if (sigmas.size() != values.size())
      throw std::invalid_argument(std::string(what) +
                                  ": weight vector length differs");
    for (const double s : sigmas)
      if (!(s > 0.0))
        throw std::invalid_argument(std::string(what) +
                                    ": non-positive standard deviation");
  }
  for (const double v : axis)
    if (!std::isfinite(v))
      throw std::invalid_argument(std::string(what) + ": non-finite axis");
  for (const double v : values)
    if (!std::isfinite(v))
      throw std::invalid_argument(std::string(what) + ": non-finite data");
}

double mean_of(const std::vector<double>& values) {
  double sum = 0.0;
  for (const double v : values) sum += v;
  return sum / static_cast<double>(values.size());
}

double wrap_phase(double phi) {
  phi = std::fmod(phi, kTwoPi);
  if (phi > kPi) phi -= kTwoPi;
  if (phi <= -kPi) phi += kTwoPi;
  return phi;
}

} // namespace

void SensitivityParams::validate() const {
  if (!(spin_factor > 0.0))
    throw std::invalid_argument("spin factor must be positive");
  if (!(gamma_nv() > 0.0))
    throw std::invalid_argument("gyromagnetic ratio must be positive");
  if (measurement_time < 0.0 || initialization_time < 0.0 ||
      pi_duration < 0.0)
    throw std::invalid_argument("times must be non-negative");
  if (!(t2_star > 0.0))
    throw std::invalid_argument("T2* must be positive");
  if (!(decay_order > 0.0))
    throw std::invalid_argument("decay order must be positive");
}

double eta_spin_projection(const SensitivityParams& params) {
  params.validate();
  if (!(params.measurement_time > 0.0))
    throw std::invalid_argument("eta_spin_projection: t_m must be positive");
  return params.hbar /
         (params.spin_factor * params.lande_factor * params.bohr_magneton) /
         std::sqrt(params.measurement_time);
}

double kappa_exp(double measurement_time, double initialization_time) {
  if (!(measurement_time > 0.0))
    throw std::invalid_argument("kappa_exp: t_m must be positive");
  if (initialization_time < 0.0)
    throw std::invalid_argument("kappa_exp: t_i must be non-negative");
  return std::sqrt((measurement_time + 2.0 * initialization_time) /
                   measurement_time);
}

double decoherence_factor(double measurement_time, double t2_star,
                          double decay_order) {
  if (measurement_time < 0.0)
    throw std::invalid_argument("decoherence_factor: t_m must be non-negative");
  if (!(t2_star > 0.0))
    throw std::invalid_argument("decoherence_factor: T2* must be positive");
  if (!(decay_order > 0.0))
    throw std::invalid_argument("decoherence_factor: order must be positive");
  return std::exp(std::pow(measurement_time / t2_star, decay_order));
}

GaussianDipFit fit_gaussian_dip(const std::vector<double>& frequencies,
                                const std::vector<double>& counts,
                                const std::vector<double>& standard_deviations) {
  check_weighted_series(frequencies, counts, standard_deviations, 5,
                        "fit_gaussian_dip");
  const auto [min_it, max_it] =
      std::minmax_element(frequencies.begin(), frequencies.end());
  const double f_center = 0.5 * (*min_it + *max_it);
  const double f_span = *max_it - *min_it;
  if (!(f_span > 0.0))
    throw std::invalid_argument("fit_gaussian_dip: degenerate axis");
  const double count_scale = mean_of(counts);
  if (!(count_scale > 0.0))
    throw std::invalid_argument("fit_gaussian_dip: counts must be positive "
                                "on average");

  const int n = static_cast<int>(counts.size());
  Eigen::VectorXd x(n), y(n), w(n);
  for (int i = 0; i < n; ++i) {
    x[i] = (frequencies[i] - f_center) / f_span;
    y[i] = counts[i] / count_scale;
    w[i] = standard_deviations.empty()
               ? 1.0
               : standard_deviations[i] / count_scale;
  }

  // Scaled parameters [baseline, contrast, center, width], all order 1.
  const auto residuals = [&](const Eigen::VectorXd& q, Eigen::VectorXd& r) {
    for (int i = 0; i < n; ++i) {
      const double z = (x[i] - q[2]) / q[3];
      const double model = q[0] * (1.0 - q[1] * std::exp(-0.5 * z * z));
      r[i] = (model - y[i]) / w[i];
    }
  };

  const double baseline0 = median(std::vector<double>(y.data(), y.data() + n));
  int dip_index = 0;
  y.minCoeff(&dip_index);
  const double contrast0 =
      std::clamp((baseline0 - y[dip_index]) / std::max(baseline0, 1e-12), 0.02,
                 0.9);
  std::vector<Eigen::VectorXd> starts;
  for (const double width0 : {0.05, 0.1, 0.25}) {
    Eigen::VectorXd q(4);
    q << baseline0, contrast0, x[dip_index], width0;
    starts.push_back(q);
  }
  {
    Eigen::VectorXd q(4);
    q << baseline0, 0.02, 0.0, 0.15;
    starts.push_back(q);
  }

  CurveFitOptions options;
  options.max_function_evaluations = 4000;
  CurveFitResult fit = fit_least_squares(residuals, n, starts, options);

  // Width sign is degenerate; canonicalize positive in scaled space.
  if (fit.parameters[3] < 0.0) {
    fit.parameters[3] = -fit.parameters[3];
    fit.covariance.row(3) *= -1.0;
    fit.covariance.col(3) *= -1.0;
  }

  GaussianDipFit out;
  out.baseline = fit.parameters[0] * count_scale;
  out.contrast = fit.parameters[1];
  out.center = f_center + fit.parameters[2] * f_span;
  out.width = fit.parameters[3] * f_span;
  const Eigen::Vector4d scale(count_scale, 1.0, f_span, f_span);
  out.covariance =
      scale.asDiagonal() * fit.covariance * scale.asDiagonal();
  out.standard_errors = out.covariance.diagonal().cwiseMax(0.0).cwiseSqrt();
  out.residual_norm = fit.residual_norm;
  out.gradient_norm = fit.gradient_norm;
  out.converged = fit.converged;
  return out;
}

double RamseyFit::contrast_standard_error() const {
  const int lines = line_count;
  if (lines < 1 || covariance.rows() < 2 + lines) return 0.0;
  double sum = 0.0;
  for (int i = 0; i < lines; ++i)
    for (int j = 0; j < lines; ++j) sum += covariance(2 + i, 2 + j);
  return std::sqrt(std::max(sum, 0.0));
}

RamseyFit fit_ramsey(const std::vector<double>& delays,
                     const std::vector<double>& counts,
                     const std::vector<double>& frequency_priors,
                     double decay_order,
                     const std::vector<double>& standard_deviations) {
  const int lines = static_cast<int>(frequency_priors.size());
  if (lines < 1 || lines > 3)
    throw std::invalid_argument("fit_ramsey: one to three frequency priors");
  const int p = 2 + 3 * lines;
  check_weighted_series(delays, counts, standard_deviations,
                        static_cast<std::size_t>(p) + 1, "fit_ramsey");
  if (!(decay_order > 0.0))
    throw std::invalid_argument("fit_ramsey: decay order must be positive");

  // Nyquist guard: the largest sampling gap must resolve the fastest prior.
  std::vector<double> sorted = delays;
  std::sort(sorted.begin(), sorted.end());
  if (sorted.front() < 0.0)
    throw std::invalid_argument("fit_ramsey: negative delay");
  double max_gap = 0.0;
  for (std::size_t i = 1; i < sorted.size(); ++i)
    max_gap = std::max(max_gap, sorted[i] - sorted[i - 1]);
  double fastest = 0.0;
  for (const double nu : frequency_priors)
    fastest = std::max(fastest, std::abs(nu));
  if (!(max_gap > 0.0))
    throw std::invalid_argument("fit_ramsey: degenerate delay grid");
  if (fastest * max_gap >= 0.5)
    throw std::invalid_argument(
        "fit_ramsey: delay grid under-resolves the fastest line");

  const double delay_scale = sorted.back();
  const double count_scale = mean_of(counts);
  if (!(count_scale > 0.0))
    throw std::invalid_argument("fit_ramsey: counts must be positive on "
                                "average");

  const int n = static_cast<int>(counts.size());
  Eigen::VectorXd x(n), y(n), w(n);
  for (int i = 0; i < n; ++i) {
    x[i] = delays[i] / delay_scale;
    y[i] = counts[i] / count_scale;
    w[i] = standard_deviations.empty()
               ? 1.0
               : standard_deviations[i] / count_scale;
  }

  // Scaled parameters [baseline, decay, B_1..L, freq_1..L, phase_1..L];
  // frequencies in cycles per scaled delay, decay time in scaled delays.
  const double m = decay_order;
  const auto residuals = [&, lines, m](const Eigen::VectorXd& q,
                                       Eigen::VectorXd& r) {
    for (int i = 0; i < n; ++i) {
      const double decay =
          std::exp(-std::pow(x[i] / std::abs(q[1]), m));
      double oscillation = 0.0;
      for (int l = 0; l < lines; ++l) {
        oscillation +=
            q[2 + l] * std::cos(kTwoPi * q[2 + lines + l] * x[i] +
                                q[2 + 2 * lines + l]);
      }
      const double model = q[0] * (1.0 + decay * oscillation);
      r[i] = (model - y[i]) / w[i];
    }
  };

  const double swing = 0.5 * (y.maxCoeff() - y.minCoeff());
  const double amplitude0 =
      std::max(0.02, swing / static_cast<double>(lines));
  std::vector<Eigen::VectorXd> starts;
  for (const double decay0 : {0.3, 0.7, 1.5}) {
    for (const double phase0 : {0.0, 0.5 * kPi}) {
      Eigen::VectorXd q(p);
      q[0] = 1.0;
      q[1] = decay0;
      for (int l = 0; l < lines; ++l) {
        q[2 + l] = amplitude0;
        q[2 + lines + l] = frequency_priors[l] * delay_scale;
        q[2 + 2 * lines + l] = phase0;
      }
      starts.push_back(q);
    }
  }

  CurveFitOptions options;
  options.max_function_evaluations = 6000;
  CurveFitResult fit = fit_least_squares(residuals, n, starts, options);

  // Canonical form: positive decay time, non-negative line amplitudes.
  if (fit.parameters[1] < 0.0) {
    fit.parameters[1] = -fit.parameters[1];
    fit.covariance.row(1) *= -1.0;
    fit.covariance.col(1) *= -1.0;
  }
  for (int l = 0; l < lines; ++l) {
    if (fit.parameters[2 + l] < 0.0) {
      fit.parameters[2 + l] = -fit.parameters[2 + l];
      fit.parameters[2 + 2 * lines + l] += kPi;
      fit.covariance.row(2 + l) *= -1.0;
      fit.covariance.col(2 + l) *= -1.0;
    }
  }

  RamseyFit out;
  out.decay_order = decay_order;
  out.line_count = lines;
  out.baseline = fit.parameters[0] * count_scale;
  out.t2_star = fit.parameters[1] * delay_scale;
  double total = 0.0;
  for (int l = 0; l < lines; ++l) total += fit.parameters[2 + l];
  out.contrast = total;
  for (int l = 0; l < lines; ++l) {
    out.amplitudes[l] =
        total > 1e-12 ? fit.parameters[2 + l] / total : 0.0;
    out.frequencies[l] = fit.parameters[2 + lines + l] / delay_scale;
    out.phases[l] = wrap_phase(fit.parameters[2 + 2 * lines + l]);
  }

  Eigen::VectorXd scale(p);
  scale[0] = count_scale;
  scale[1] = delay_scale;
  for (int l = 0; l < lines; ++l) {
    scale[2 + l] = 1.0;
    scale[2 + lines + l] = 1.0 / delay_scale;
    scale[2 + 2 * lines + l] = 1.0;
  }
  out.covariance = scale.asDiagonal() * fit.covariance * scale.asDiagonal();
  out.standard_errors = out.covariance.diagonal().cwiseMax(0.0).cwiseSqrt();
  out.residual_norm = fit.residual_norm;
  out.gradient_norm = fit.gradient_norm;
  out.converged = fit.converged;
  return out;
}

double eta_podmr(const GaussianDipFit& fit, const SensitivityParams& params) {
  params.validate();
  if (!(fit.contrast > 0.0))
    throw std::domain_error("eta_podmr: fitted contrast must be positive");
  if (!(fit.baseline > 0.0))
    throw std::domain_error("eta_podmr: fitted baseline must be positive");
  if (!(fit.width > 0.0))
    throw std::domain_error("eta_podmr: fitted width must be positive");
  const double sigma_f = fit.fwhm();
  return kGaussianLineshapeFactor * sigma_f /
         (params.gamma_nv() * fit.contrast * std::sqrt(fit.baseline)) *
         std::sqrt(params.pi_duration + params.measurement_time);
}

double eta_ramsey(const RamseyFit& fit, const SensitivityParams& params,
                  double tau) {
  params.validate();
  if (!(tau > 0.0))
    throw std::invalid_argument("eta_ramsey: tau must be positive");
  if (!(fit.contrast > 0.0))
    throw std::domain_error("eta_ramsey: fitted contrast must be positive");
  if (!(fit.t2_star > 0.0))
    throw std::domain_error("eta_ramsey: fitted T2* must be positive");
  return std::exp(std::pow(tau / fit.t2_star, fit.decay_order)) *
         std::sqrt(tau + params.measurement_time) /
         (fit.contrast * params.gamma_nv() * tau);
}

} // namespace nvqoc
