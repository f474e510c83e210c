#pragma once

#include <stdexcept>
#include <string>

namespace lnpt {

// Base for every error raised by the library. The CLI maps subclasses to exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Incompatible tensor shapes; the message names the op and both shapes.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// NaN/Inf produced where the contract forbids it, or a diverged training run.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Bad configuration value, unknown key, or misuse of an API precondition.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Filesystem failures and malformed on-disk formats.
class IoError : public Error {
 public:
  using Error::Error;
};

class FormatError : public IoError {
 public:
  using IoError::IoError;
};

}  // namespace lnpt
