#pragma once

#include <stdexcept>
#include <string>

namespace mionet {

/// Base class for all library errors.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Mismatched tensor/vector/matrix shapes. Messages name the offending slot.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Invalid model, training, or sampler configuration. Messages name the field.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Query point outside the domain of a sampled function.
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Malformed or inconsistent dataset contents.
class DataError : public Error {
 public:
  using Error::Error;
};

/// Numerical failure (factorization breakdown, solver blow-up).
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// Training failure; carries the epoch at which it occurred.
class TrainingError : public Error {
 public:
  TrainingError(const std::string& what, long epoch)
      : Error(what + " (epoch " + std::to_string(epoch) + ")"), epoch(epoch) {}
  long epoch;
};

/// API misuse, e.g. calling a variant-specific operation on the wrong model.
class UsageError : public Error {
 public:
  using Error::Error;
};

}  // namespace mionet
