#pragma once

#include <stdexcept>
#include <string>

namespace pipno {

/// Root of the project's exception hierarchy.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Extents disagree with what an operation requires.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Real/complex mismatch.
class DtypeError : public Error {
 public:
  using Error::Error;
};

/// Blow-up, NaN or Inf in a solver, loss or gradient.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// File cannot be read, written or parsed.
class IoError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration or arguments.
class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace pipno
