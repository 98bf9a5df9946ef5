#pragma once

#include <Eigen/Dense>

#include <complex>
#include <vector>

namespace nvqoc {

using Unitary2 = Eigen::Matrix2cd;

// Rotating-frame Hamiltonian H = (hbar/2)(detuning*sz + u1*sx + u2*sy).
// Both members are angular frequencies in rad/s.
struct RwaHamiltonianParams {
  double detuning = 0.0;
  double rabi_max = 0.0;
};

// One I/Q sample of the microwave envelope, rad/s.
struct IqSample {
  double u1 = 0.0;
  double u2 = 0.0;
  double magnitude() const { return std::sqrt(u1 * u1 + u2 * u2); }
};

// Sampled two-channel control envelope. Duration is samples.size()*dt by
// construction.
struct ControlPulse {
  std::vector<IqSample> samples;
  double dt = 0.0; // s

  double duration() const { return static_cast<double>(samples.size()) * dt; }
  double peak_amplitude() const;
  bool finite() const;
};

// Constant-amplitude pulse along +x. dt is picked so rabi*dt <= 0.05 rad
// unless a finer grid is requested.
ControlPulse make_rectangular_pulse(double rabi, double duration,
                                    double max_dt = 0.0);

// U = exp(-i sum_j c_j sigma_j) up to a global phase; c = |(cx,cy,cz)| lies
// on the principal branch [0, pi]. (c, n) and (pi - c, -n) describe the same
// unitary, so decompose() canonicalizes to c <= pi/2; at c = pi/2 exactly the
// axis sign follows the determinant's principal argument. `degenerate` marks
// U within tolerance of +-I (up to phase), where the axis is arbitrary and
// fixed to +x by convention.
struct AxisAngleDecomposition {
  double cx = 0.0;
  double cy = 0.0;
  double cz = 0.0;
  bool degenerate = false;

  double angle() const { return std::sqrt(cx * cx + cy * cy + cz * cz); }
};

enum class SpinState {
  Zero,   // |0>
  One,    // |1>
  PlusX,  // (|0> + |1>)/sqrt(2)
  PlusY,  // (|0> + i|1>)/sqrt(2)
  MinusX, // (|0> - |1>)/sqrt(2)
  MinusY, // (|0> - i|1>)/sqrt(2)
};

Eigen::Vector2cd ket(SpinState s);

// Time-ordered product of per-sample closed-form 2x2 exponentials of
// H = (hbar/2)(detuning*sz + s*u1*sx + s*u2*sy), s = amplitude_scale.
// Exactly unitary per factor. Throws std::invalid_argument on non-finite
// samples or amplitude_scale outside (0, 1].
Unitary2 propagate(const RwaHamiltonianParams& params, const ControlPulse& pulse,
                   double amplitude_scale = 1.0);

// Free evolution for time tau at the given detuning (controls off).
Unitary2 free_evolution(double detuning, double tau);

// exp(-i (cx sx + cy sy + cz sz))
Unitary2 axis_angle_unitary(double cx, double cy, double cz);

// |<target| U |initial>|^2
double state_fidelity(const Unitary2& u, SpinState initial, SpinState target);

// Population transferred |0> -> |1>.
inline double transfer_probability(const Unitary2& u) {
  return state_fidelity(u, SpinState::Zero, SpinState::One);
}

AxisAngleDecomposition decompose(const Unitary2& u);

// Max-norm of U^dagger U - I; unitarity defect.
double unitarity_defect(const Unitary2& u);

} // namespace nvqoc
