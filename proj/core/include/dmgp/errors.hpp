#pragma once

#include <stdexcept>
#include <string>

namespace dmgp {

// Thrown when a caller violates a documented precondition (bad shapes,
// out-of-range arguments, malformed input files).
class ContractViolation : public std::invalid_argument {
 public:
  explicit ContractViolation(const std::string& what)
      : std::invalid_argument(what) {}
};

// Thrown when a matrix that must be positive definite fails factorization
// even after the full jitter escalation schedule.
class NotPositiveDefinite : public std::runtime_error {
 public:
  explicit NotPositiveDefinite(const std::string& what)
      : std::runtime_error(what) {}
};

inline void require(bool cond, const std::string& what) {
  if (!cond) throw ContractViolation(what);
}

}  // namespace dmgp
