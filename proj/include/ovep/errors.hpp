#pragma once

#include <stdexcept>

namespace ovep {

/// Configuration / precondition violations. The CLI maps these to exit code 2.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidPartition : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

class LengthMismatch : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

class InsufficientTrials : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

class StaleState : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

/// Numerical failures during computation. The CLI maps these to exit code 3.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class NotPositiveDefinite : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

class NotPsd : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

class DegeneratePrecision : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

class NotConverged : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

}  // namespace ovep
