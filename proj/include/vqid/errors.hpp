#pragma once

#include <stdexcept>
#include <string>

namespace vqid {

// Malformed or inconsistent configuration / arguments. CLI exit code 2.
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

// A requested construction has no feasible solution (constraint cannot be
// met, registry collision cannot be repaired, decoder precondition fails).
// CLI exit code 3.
struct InfeasibleError : std::runtime_error {
  explicit InfeasibleError(const std::string& what) : std::runtime_error(what) {}
};

// A hard resource cap would be exceeded (sub-codebook size, brute-force
// enumeration, type enumeration). CLI exit code 4.
struct CapExceededError : std::runtime_error {
  explicit CapExceededError(const std::string& what) : std::runtime_error(what) {}
};

// An iterative solver failed to converge within its iteration cap.
struct SolverError : std::runtime_error {
  explicit SolverError(const std::string& what, double residual)
      : std::runtime_error(what), residual(residual) {}
  double residual;
};

}  // namespace vqid
