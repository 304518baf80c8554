// Exception hierarchy shared across the library. Every error carries a
// process exit code so the command line tool can map failures uniformly:
// bad configuration -> 2, resource/budget overruns -> 3, numerical -> 4.
#pragma once

#include <stdexcept>
#include <string>

namespace gkpsense {

class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what, int exit_code = 4)
      : std::runtime_error(what), exit_code_(exit_code) {}
  int exit_code() const noexcept { return exit_code_; }

 private:
  int exit_code_;
};

// Configuration and input validation (exit 2).
class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error(what, 2) {}
};

// Resource limits: memory estimates, budget overruns (exit 3).
class ResourceError : public Error {
 public:
  explicit ResourceError(const std::string& what) : Error(what, 3) {}
};

// Numerical failures (exit 4).
class NumericalError : public Error {
 public:
  explicit NumericalError(const std::string& what) : Error(what, 4) {}
};

class DimensionMismatchError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

// Raised when a state or operator leaks past the Fock cutoff beyond the
// configured threshold.
class TruncationError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

// Raised when a measurement operator pair fails to resolve the identity.
class CompletenessError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

class GaugeError : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

// Master-equation integration left the physical manifold (trace drift).
class IntegratorError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

class InvalidLifetimesError : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

class ZeroProbabilityError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

// File IO failures; reported with the offending path (exit 2, since a bad
// path or unwritable directory is a configuration problem).
class IoError : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

class GridError : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

class DomainError : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

class InfeasibleTargetError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

class BudgetError : public ResourceError {
 public:
  using ResourceError::ResourceError;
};

class DegenerateDerivativeError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

class SupportError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

}  // namespace gkpsense
