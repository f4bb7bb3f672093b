#pragma once

#include <stdexcept>
#include <string>

namespace surrogate {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed or inconsistent input data (bad CSV, invariant violations).
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// An estimator could not produce a value (degenerate design, weak instrument, ...).
class EstimationError : public Error {
 public:
  using Error::Error;
};

/// Bad configuration text, unknown keys, invalid knob values.
class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace surrogate
