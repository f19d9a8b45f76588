#pragma once

#include <stdexcept>
#include <string>

namespace selforder {

// Argument/precondition violations use std::invalid_argument directly.

/// An iterative numerical procedure failed (step-size underflow, quadrature
/// that does not converge, singular solve, ...).
class NumericalFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A steady-state search did not settle before its time limit.
class ConvergenceFailure : public std::runtime_error {
 public:
  ConvergenceFailure(const std::string& what, double last_drift)
      : std::runtime_error(what), last_drift_(last_drift) {}
  double last_drift() const { return last_drift_; }

 private:
  double last_drift_;
};

/// Problem size exceeds a configured limit of the requested method.
class ResourceLimit : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed or inconsistent run configuration.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace selforder
