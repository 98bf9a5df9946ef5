#pragma once

#include <cstdint>
#include <string>

#include "nvqoc/nv_model.hpp"
#include "nvqoc/photophysics.hpp"
#include "nvqoc/sequences.hpp"

namespace nvqoc {

// Everything the measurement server needs to stand up its simulated sample:
// the ground-truth model, the readout operating point used by pulse-driven
// protocols, default shot budgets, and the noise mode. The same file is read
// by the client so both sides agree on drive normalization and line priors.
//
// File schema (structured text, one object; all fields optional, defaults in
// parentheses; unknown fields are rejected to catch typos):
//   model.resonance_ghz         (2.871)   bare spin resonance
//   model.rabi_max_mhz          (25.0)    full-amplitude drive, linear MHz
//   model.hyperfine.offsets_mhz ([-2.16, 0, 2.16]) line offsets, linear MHz
//   model.hyperfine.weights     (equal)   relative weights, normalized on load
//   model.hyperfine.t2_star_us  (2.0)     inhomogeneous dephasing time
//   model.hyperfine.decay_order (2.0)     free-induction envelope exponent
//   model.rates.radiative_lifetime_ns    (12)   spin-conserving optical decay
//   model.rates.isc_e1_lifetime_ns       (24)   excited m_s=+-1 shelving
//   model.rates.isc_e0_lifetime_ns       (300)  excited m_s=0 shelving
//   model.rates.metastable_lifetime_ns   (300)  singlet decay
//   model.rates.metastable_g0_fraction   (2/3)  branching into ground m_s=0
//   model.rates.pump_saturated_lifetime_ns (40) 1/pump rate at saturation
//   model.rates.saturation_power_mw      (10)   optical saturation power
//   model.rates.collection_efficiency    (0.03) detected fraction
//   model.rates.background_kcps          (30)   laser-on background rate
//   readout.laser_power_mw      (10)
//   readout.laser_duration_ns   (1000)
//   readout.readout_window_ns   (450)
//   readout.wait_duration_ns    (300)
//   shots.repetitions           (100)
//   shots.shots_per_repetition  (200)
//   noiseless                   (false)
//   sampling                    ("expectation" | "per-repetition")
//   quadrature_nodes            (21)
struct SimulatorConfig {
  NvModel model;
  ReadoutParams readout;
  ReadoutSettings shots;
  bool noiseless = false;
  DephasingSampling sampling = DephasingSampling::Expectation;
  int quadrature_nodes = 21;

  // Sequence-protocol view of this configuration (detuning filled per call).
  SequenceContext sequence_context() const;

  void validate() const; // throws std::invalid_argument
};

SimulatorConfig load_simulator_config(const std::string& path);
SimulatorConfig parse_simulator_config(const std::string& text);
std::string encode_simulator_config(const SimulatorConfig& config);

// Fixed point of encode/parse. The file schema stores decimal units (ns
// lifetimes, MHz offsets) whose conversion to internal SI values is not
// bitwise invertible, so a run computing from an in-memory struct and a
// replay computing from its serialized copy can disagree by one ulp.
// Every consumer that must agree bit-for-bit starts from this instead.
SimulatorConfig canonical_simulator_config(const SimulatorConfig& config);

} // namespace nvqoc
