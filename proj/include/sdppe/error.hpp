#pragma once

#include <stdexcept>
#include <string>

namespace sdppe {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shapes of policies, models and rewards do not agree.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A value is outside the domain an operation accepts.
class DomainError : public Error {
 public:
  using Error::Error;
};

/// The instance needs more explicitly enumerated policies than allowed.
class InstanceTooLarge : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration input. `path()` addresses the offending field,
/// e.g. `transitions[2][0][1]`.
class ConfigError : public Error {
 public:
  ConfigError(std::string path, const std::string& message)
      : Error(path.empty() ? message : path + ": " + message),
        path_(std::move(path)) {}

  const std::string& path() const { return path_; }

 private:
  std::string path_;
};

}  // namespace sdppe
