#pragma once

#include <stdexcept>
#include <string>

namespace xbo {

/// Argument outside the domain an operation is defined on.
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Egg configuration for which the cooking-time model has no positive solution.
class UncookableError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid configuration value (explainer settings, search space, ...).
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Operation called on an object in the wrong state (e.g. an unfit model).
class UsageError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Linear algebra failure, e.g. covariance still not positive definite after jitter.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class FitError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Rejected trial or session operation. `code` is machine readable
/// ("trials_exhausted", "no_adjustment", "fixed_parameter_modified", ...).
class ProtocolError : public std::runtime_error {
 public:
  ProtocolError(std::string code, const std::string& message)
      : std::runtime_error(message), code_(std::move(code)) {}
  const std::string& code() const noexcept { return code_; }

 private:
  std::string code_;
};

/// Scenario file or session log that fails to parse or validate.
class LoadError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace xbo
