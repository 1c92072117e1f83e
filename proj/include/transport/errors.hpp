#pragma once

#include <stdexcept>
#include <string>

namespace transport {

// Bad inputs: malformed files, unparseable term specs, dimension or label
// mismatches, contract violations detectable before any solve starts.
class InputError : public std::runtime_error {
 public:
  explicit InputError(const std::string& msg) : std::runtime_error(msg) {}
};

// Numerical failures during estimation: infeasible calibration, singular
// systems, iteration budgets exhausted where the caller asked for a hard
// failure.
class SolverError : public std::runtime_error {
 public:
  explicit SolverError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace transport
