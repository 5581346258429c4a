#pragma once

#include <stdexcept>
#include <string>

namespace volseg {

// Base for every error raised by the library. The CLI maps the subclasses
// onto its exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor or volume extents that do not fit the operation.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Malformed file contents (bad magic, truncated payload, inconsistent manifest).
class FormatError : public Error {
 public:
  using Error::Error;
};

// Filesystem failures.
class IoError : public Error {
 public:
  using Error::Error;
};

// Invalid configuration values or preconditions on parameters.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// NaN/Inf encountered, failed gradient check, misuse of the autograd tape.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace volseg
