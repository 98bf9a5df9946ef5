#include "nvqoc/spin_dynamics.hpp"

#include <cmath>
#include <stdexcept>

#include "nvqoc/units.hpp"

namespace nvqoc {

namespace {

using std::complex;
const complex<double> kI(0.0, 1.0);

// exp(-i (gx sx + gy sy + gz sz)) in closed form.
Unitary2 pauli_exponential(double gx, double gy, double gz) {
  const double theta = std::sqrt(gx * gx + gy * gy + gz * gz);
  Unitary2 u;
  if (theta < 1e-300) {
    u.setIdentity();
    return u;
  }
  const double c = std::cos(theta);
  const double snc = std::sin(theta) / theta; // sin(theta)/theta
  u(0, 0) = complex<double>(c, -snc * gz);
  u(0, 1) = complex<double>(-snc * gy, -snc * gx);
  u(1, 0) = complex<double>(snc * gy, -snc * gx);
  u(1, 1) = complex<double>(c, snc * gz);
  return u;
}

} // namespace

double ControlPulse::peak_amplitude() const {
  double peak = 0.0;
  for (const auto& s : samples) peak = std::max(peak, s.magnitude());
  return peak;
}

bool ControlPulse::finite() const {
  if (!std::isfinite(dt)) return false;
  for (const auto& s : samples) {
    if (!std::isfinite(s.u1) || !std::isfinite(s.u2)) return false;
  }
  return true;
}

ControlPulse make_rectangular_pulse(double rabi, double duration, double max_dt) {
  if (!(duration > 0.0)) throw std::invalid_argument("pulse duration must be > 0");
  double dt_cap = max_dt;
  if (dt_cap <= 0.0) {
    // rabi*dt <= 0.05 rad keeps piecewise-constant commutator error small
    dt_cap = (rabi > 0.0) ? 0.05 / rabi : duration;
  }
  const std::size_t n = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::ceil(duration / dt_cap)));
  ControlPulse p;
  p.dt = duration / static_cast<double>(n);
  p.samples.assign(n, IqSample{rabi, 0.0});
  return p;
}

Eigen::Vector2cd ket(SpinState s) {
  const double r = 1.0 / std::sqrt(2.0);
  switch (s) {
    case SpinState::Zero:
      return {1.0, 0.0};
    case SpinState::One:
      return {0.0, 1.0};
    case SpinState::PlusX:
      return {r, r};
    case SpinState::PlusY:
      return {r, complex<double>(0.0, r)};
    case SpinState::MinusX:
      return {r, -r};
    case SpinState::MinusY:
      return {r, complex<double>(0.0, -r)};
  }
  throw std::invalid_argument("unknown spin state label");
}

Unitary2 propagate(const RwaHamiltonianParams& params, const ControlPulse& pulse,
                   double amplitude_scale) {
  if (!(amplitude_scale > 0.0) || amplitude_scale > 1.0)
    throw std::invalid_argument("amplitude_scale must lie in (0, 1]");
  if (!pulse.finite() || !std::isfinite(params.detuning))
    throw std::invalid_argument("non-finite pulse sample or detuning");

  Unitary2 u = Unitary2::Identity();
  const double half_dt = 0.5 * pulse.dt;
  for (const auto& s : pulse.samples) {
    const Unitary2 step =
        pauli_exponential(amplitude_scale * s.u1 * half_dt,
                          amplitude_scale * s.u2 * half_dt,
                          params.detuning * half_dt);
    u = step * u;
  }
  return u;
}

Unitary2 free_evolution(double detuning, double tau) {
  if (tau < 0.0) throw std::invalid_argument("negative free-evolution time");
  return pauli_exponential(0.0, 0.0, 0.5 * detuning * tau);
}

Unitary2 axis_angle_unitary(double cx, double cy, double cz) {
  return pauli_exponential(cx, cy, cz);
}

double state_fidelity(const Unitary2& u, SpinState initial, SpinState target) {
  const complex<double> amp = ket(target).adjoint() * u * ket(initial);
  return std::norm(amp);
}

AxisAngleDecomposition decompose(const Unitary2& u) {
  // Strip the global phase via the principal argument of det(U); the
  // remaining SU(2) representative fixes the branch c in [0, pi].
  const complex<double> det = u.determinant();
  const double alpha = 0.5 * std::arg(det);
  const Unitary2 v = std::exp(complex<double>(0.0, -alpha)) * u;

  const double cos_c = std::clamp(0.5 * v.trace().real(), -1.0, 1.0);
  double c = std::acos(cos_c);
  const double sin_c = std::sin(c);

  AxisAngleDecomposition d;
  if (sin_c < 1e-9) {
    // U ~ +-I up to phase: axis unrecoverable, +x by convention. Both
    // representations collapse to the canonical c = 0.
    d.cx = std::min(c, kPi - c);
    d.degenerate = true;
    return d;
  }
  double nx = -0.5 * (v(0, 1).imag() + v(1, 0).imag());
  double ny = 0.5 * (v(1, 0).real() - v(0, 1).real());
  double nz = 0.5 * (v(1, 1).imag() - v(0, 0).imag());
  // (c, n) and (pi - c, -n) describe the same unitary up to phase; pick the
  // canonical half-branch c in [0, pi/2].
  if (cos_c < 0.0) {
    c = kPi - c;
    nx = -nx;
    ny = -ny;
    nz = -nz;
  }
  const double norm = std::sqrt(nx * nx + ny * ny + nz * nz);
  d.cx = c * nx / norm;
  d.cy = c * ny / norm;
  d.cz = c * nz / norm;
  return d;
}

double unitarity_defect(const Unitary2& u) {
  const Unitary2 r = u.adjoint() * u - Unitary2::Identity();
  return r.cwiseAbs().maxCoeff();
}

} // namespace nvqoc
