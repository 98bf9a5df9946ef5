#pragma once

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <vector>

#include "nvqoc/units.hpp"

namespace nvqoc {

// Peak-to-FWHM conversion for a Gaussian slope readout: sqrt(e/(8 ln 2)).
inline const double kGaussianLineshapeFactor =
    std::sqrt(std::exp(1.0) / (8.0 * std::log(2.0)));

// Operating-point inputs for magnetometric sensitivity evaluation. Times in
// seconds, counts per shot, frequencies angular (rad/s).
struct SensitivityParams {
  double spin_factor = 1.0;                // S, 1 for a single NV
  double lande_factor = kLandeFactor;      // g_e
  double bohr_magneton = kBohrMagneton;    // J/T
  double hbar = kHbar;                     // J s
  double measurement_time = 0.0;           // t_m per shot
  double initialization_time = 0.0;        // t_i per shot
  double pi_duration = 0.0;                // T_pi
  double t2_star = 2e-6;
  double decay_order = 2.0;                // m
  double mean_counts = 0.0;                // R bar, counts per shot
  double contrast = 0.0;                   // C bar

  double gamma_nv() const { return lande_factor * bohr_magneton / hbar; }
  // Throws std::invalid_argument when a time is negative, the gyromagnetic
  // ratio is non-positive, or the decay order is not positive.
  void validate() const;
};

// Spin-projection-limited sensitivity floor, T/sqrt(Hz). Requires t_m > 0.
double eta_spin_projection(const SensitivityParams& params);

// Duty-cycle overhead factor sqrt((t_m + 2 t_i)/t_m). Requires t_m > 0 and
// t_i >= 0.
double kappa_exp(double measurement_time, double initialization_time);

// exp((t_m/T2*)^m). Requires t_m >= 0, T2* > 0, m > 0.
double decoherence_factor(double measurement_time, double t2_star,
                          double decay_order);

// Per-shot measurement time of the pulsed readout: wait plus both laser
// initialization passes bracketing it.
inline double podmr_measurement_time(double wait_time,
                                     double initialization_time) {
  return wait_time + 2.0 * initialization_time;
}

// Gaussian dip fitted to a normalized spectrum:
//   N(f) = baseline * (1 - contrast * exp(-((f - center)/width)^2 / 2)).
// Axis units are whatever the data used; feed angular frequencies when the
// result flows into eta_podmr. Parameter order in covariance/standard_errors:
// [baseline, contrast, center, width].
struct GaussianDipFit {
  double baseline = 0.0;
  double contrast = 0.0;
  double center = 0.0;
  double width = 0.0; // Gaussian sigma, > 0 after fitting
  Eigen::Matrix4d covariance = Eigen::Matrix4d::Zero();
  Eigen::Vector4d standard_errors = Eigen::Vector4d::Zero();
  double residual_norm = 0.0;
  double gradient_norm = 0.0;
  bool converged = false;

  double fwhm() const {
    return 2.0 * std::sqrt(2.0 * std::log(2.0)) * width;
  }
};

// Weighted least-squares Gaussian dip fit. `standard_deviations` holds the
// per-point measurement sigma (empty = unweighted). Requires at least five
// points and a non-degenerate axis. A fit that failed to converge comes back
// flagged, never silently substituted.
GaussianDipFit fit_gaussian_dip(const std::vector<double>& frequencies,
                                const std::vector<double>& counts,
                                const std::vector<double>& standard_deviations = {});

// Decaying multi-line fringe fitted to Ramsey data:
//   N(tau) = baseline * (1 + e^{-(tau/T2*)^m} sum_i B_i cos(2 pi nu_i tau
//            + phi_i)),
// with contrast = sum_i B_i and amplitudes A_i = B_i / contrast (so the
// fitted oscillation amplitudes sum to one). Parameter order in
// covariance/standard_errors: [baseline, T2*, B_1..B_L, nu_1..nu_L,
// phi_1..phi_L] for L fitted lines.
struct RamseyFit {
  double baseline = 0.0;
  double contrast = 0.0;
  double t2_star = 0.0;
  double decay_order = 2.0;
  int line_count = 0;
  std::array<double, 3> amplitudes{};  // normalized, unused lines zero
  std::array<double, 3> frequencies{}; // cycles per delay unit (Hz for s)
  std::array<double, 3> phases{};      // wrapped to (-pi, pi]
  Eigen::MatrixXd covariance;
  Eigen::VectorXd standard_errors;
  double residual_norm = 0.0;
  double gradient_norm = 0.0;
  bool converged = false;

  double t2_star_standard_error() const { return standard_errors(1); }
  // Delta-method error of the summed line amplitudes.
  double contrast_standard_error() const;
};

// Weighted least-squares fringe fit with one to three lines, initialized
// from the frequency priors (drive detuning plus hyperfine offsets, in
// cycles per delay unit). The decay order m is held fixed during the fit.
// Throws std::invalid_argument when the delay grid cannot resolve the
// fastest prior (Nyquist), on an empty/oversized prior list, or on
// mismatched input lengths.
RamseyFit fit_ramsey(const std::vector<double>& delays,
                     const std::vector<double>& counts,
                     const std::vector<double>& frequency_priors,
                     double decay_order = 2.0,
                     const std::vector<double>& standard_deviations = {});

// Pulsed-spectroscopy sensitivity: P * sigma_f * sqrt(T_pi + t_m) /
// (gamma_nv * contrast * sqrt(mean counts)), with sigma_f the fitted FWHM
// (angular), contrast and baseline taken from the fit, T_pi and t_m from the
// params. Throws std::domain_error when the fitted contrast or baseline is
// non-positive.
double eta_podmr(const GaussianDipFit& fit, const SensitivityParams& params);

// Ramsey sensitivity at interrogation time tau:
//   exp((tau/T2*)^m) * sqrt(tau + t_m) / (contrast * gamma_nv * tau),
// contrast/T2*/m from the fit, t_m from the params. Requires tau > 0;
// throws std::domain_error when the fitted contrast or T2* is non-positive.
double eta_ramsey(const RamseyFit& fit, const SensitivityParams& params,
                  double tau);

} // namespace nvqoc
