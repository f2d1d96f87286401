#pragma once

#include <stdexcept>
#include <string>

namespace relmod {

/// Base class for every error thrown by this library.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Tensor shape does not satisfy an op's contract.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Numeric failure: NaN/Inf produced, guarded division, bad reduction.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Vector with (near) zero norm fed into a normalizing op.
class DegenerateVectorError : public NumericError {
 public:
  using Error::Error;
};

/// Invalid or inconsistent configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// File-format or filesystem failure.
class IoError : public Error {
 public:
  using Error::Error;
};

/// Checkpoint/model/config incompatibility.
class CompatError : public Error {
 public:
  using Error::Error;
};

/// A verification suite (e.g. gradcheck) did not pass.
class CheckFailure : public Error {
 public:
  using Error::Error;
};

}  // namespace relmod
