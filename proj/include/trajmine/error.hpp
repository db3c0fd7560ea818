#pragma once

#include <stdexcept>
#include <string>

namespace trajmine {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  /// Short machine-readable category, used by the CLI and the HTTP layer.
  virtual const char* code() const noexcept { return "error"; }
};

/// A caller-supplied value violates a documented precondition.
class InputError : public Error {
 public:
  using Error::Error;
  const char* code() const noexcept override { return "invalid_input"; }
};

/// A configuration file or config object is malformed or inconsistent.
class ConfigError : public Error {
 public:
  using Error::Error;
  const char* code() const noexcept override { return "config"; }
};

/// Filesystem failure; the message always carries the offending path.
class IoError : public Error {
 public:
  using Error::Error;
  const char* code() const noexcept override { return "io"; }
};

/// A serialized artifact has a bad magic header, version or layout.
class FormatError : public Error {
 public:
  using Error::Error;
  const char* code() const noexcept override { return "format"; }
};

/// NaN/Inf encountered where finite values are required.
class NumericError : public Error {
 public:
  using Error::Error;
  const char* code() const noexcept override { return "numeric"; }
};

/// Raised by extraction for trajectories without a single online minute.
class EmptyTrajectoryError : public InputError {
 public:
  using InputError::InputError;
  const char* code() const noexcept override { return "empty_trajectory"; }
};

/// A named entity (run, cluster, player-day) does not exist.
class NotFoundError : public Error {
 public:
  using Error::Error;
  const char* code() const noexcept override { return "not_found"; }
};

}  // namespace trajmine
