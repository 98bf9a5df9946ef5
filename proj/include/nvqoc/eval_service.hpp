#pragma once

#include <cstdint>
#include <string>

#include "nvqoc/protocol.hpp"
#include "nvqoc/sim_config.hpp"

namespace nvqoc {

// Server-side request evaluator: owns the simulated sample and answers one
// EvalRequest at a time. Stateless across requests — the RNG for request id
// r is derived as derive_seed(master_seed, r), so identical requests against
// an identically seeded service return identical responses regardless of
// ordering (the replay contract).
class EvalService {
 public:
  EvalService(SimulatorConfig config, std::uint64_t master_seed);

  // Typed path; throws ProtocolError / std::invalid_argument on requests the
  // simulation cannot run.
  EvalResponse evaluate(const EvalRequest& request) const;

  // Wire path: parses a request line and returns a response or error line.
  // Never throws; malformed input yields a structured error naming the field.
  std::string handle_line(const std::string& line) const;

  const SimulatorConfig& config() const { return config_; }
  std::uint64_t master_seed() const { return master_seed_; }

 private:
  SimulatorConfig config_;
  std::uint64_t master_seed_ = 0;
};

} // namespace nvqoc
