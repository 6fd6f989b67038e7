#pragma once

#include <stdexcept>
#include <string>

namespace itpn {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Incompatible tensor extents.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Duplicate or out-of-range token index.
class IndexError : public Error {
 public:
  using Error::Error;
};

// Invalid configuration value or combination.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Caller broke an operation's precondition.
class ContractError : public Error {
 public:
  using Error::Error;
};

// Internal invariant that valid inputs can never violate.
class InvariantViolation : public Error {
 public:
  using Error::Error;
};

enum class LoadErrorKind {
  io,
  bad_magic,
  version_mismatch,
  truncated,
  size_mismatch,
  shape_mismatch,
  missing_tensor,
  unsupported_dtype,
  out_of_range,
  parse,
};

const char* to_string(LoadErrorKind kind);

class LoadError : public Error {
 public:
  LoadError(LoadErrorKind kind, const std::string& message)
      : Error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

  LoadErrorKind kind() const { return kind_; }

 private:
  LoadErrorKind kind_;
};

}  // namespace itpn
