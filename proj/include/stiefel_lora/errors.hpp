#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace stiefel_lora {

/// Root of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Incompatible matrix shapes.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration or hyperparameters. Maps to CLI exit code 1.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed matrix text, checkpoint, or CSV input. Maps to exit code 1.
class FormatError : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

/// Base of numerical failures (rank deficiency, non-finite values).
/// Maps to CLI exit code 2.
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// QR encountered |R_ii| below the rank threshold.
class RankDeficiencyError : public NumericalError {
 public:
  RankDeficiencyError(const std::string& what, std::size_t column)
      : NumericalError(what), column_(column) {}

  std::size_t column() const noexcept { return column_; }

 private:
  std::size_t column_;
};

/// Non-finite gradient entry seen by an optimizer step.
class GradientError : public NumericalError {
 public:
  GradientError(const std::string& what, long step)
      : NumericalError(what), step_(step) {}

  long step() const noexcept { return step_; }

 private:
  long step_;
};

/// A normalization hit a (near) zero-norm column.
class DegenerateError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

/// A point that should be on the Stiefel manifold is not.
class ManifoldError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

}  // namespace stiefel_lora
