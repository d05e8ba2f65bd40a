#pragma once

#include <stdexcept>
#include <string>

namespace s3d {

// Base of every error thrown by the library. The CLI maps the
// validation family to exit code 1 and everything else to 2.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ValidationError : public Error {
 public:
  using Error::Error;
};

// Malformed file contents (bad magic, truncated payload, ...).
class FormatError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

// A value outside its domain (label >= C, NaN pixel, ...).
class ValueError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

// Inconsistent shapes or configuration.
class ConfigError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Mutation of frozen state.
class StateError : public Error {
 public:
  using Error::Error;
};

// Non-finite values, non-converging searches.
class NumericError : public Error {
 public:
  using Error::Error;
};

// A metric with no defined value (e.g. every class empty).
class UndefinedMetricError : public Error {
 public:
  using Error::Error;
};

}  // namespace s3d
