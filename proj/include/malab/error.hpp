#pragma once

#include <stdexcept>
#include <string>

namespace malab {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A precondition on the arguments of an operation does not hold.
class DomainError : public Error {
 public:
  using Error::Error;
};

/// A size cap (configuration space, dense matrix) would be exceeded.
class CapacityError : public Error {
 public:
  using Error::Error;
};

/// The requested operation is not defined for this noise model.
class UnsupportedError : public Error {
 public:
  using Error::Error;
};

/// A numerical routine failed (singular solve, no convergence, ambiguity).
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// An experiment configuration is malformed; `field` names the offending key.
class ConfigError : public Error {
 public:
  ConfigError(std::string field, const std::string& message)
      : Error(field + ": " + message), field_(std::move(field)) {}
  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

}  // namespace malab
