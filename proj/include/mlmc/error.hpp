#pragma once

#include <stdexcept>
#include <string>

namespace mlmc {

/// Base of every exception thrown by the engine. The C API maps each
/// subclass onto one status code.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// An operation was called on data that is not ready for it (e.g. allocation
/// without pilot statistics).
class StateError : public Error {
 public:
  using Error::Error;
};

/// Objective with no non-zero payoff contribution.
class DegenerateObjective : public Error {
 public:
  using Error::Error;
};

class BracketError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  ConfigError(std::string field_path, const std::string& message)
      : Error(field_path + ": " + message), field_path_(std::move(field_path)) {}

  const std::string& field_path() const noexcept { return field_path_; }

 private:
  std::string field_path_;
};

/// Iterative procedure stopped without meeting its target. Subclasses carry
/// whatever partial result the procedure had reached.
class ConvergenceError : public Error {
 public:
  using Error::Error;
};

}  // namespace mlmc
