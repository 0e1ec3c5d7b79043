#pragma once

#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace sgdlab {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

class ArgumentError : public Error {
 public:
  using Error::Error;
};

/// Raised when H + lambda*I (or another matrix that must be inverted) is
/// numerically singular. `null_direction` is a unit vector spanning the
/// offending eigenspace.
class SingularityError : public Error {
 public:
  SingularityError(const std::string& what, std::vector<double> null_direction)
      : Error(what), null_direction_(std::move(null_direction)) {}
  const std::vector<double>& null_direction() const { return null_direction_; }

 private:
  std::vector<double> null_direction_;
};

/// The noise model violates the shared-eigenbasis requirement of the
/// phase-space OU model.
class ModelError : public Error {
 public:
  using Error::Error;
};

class DecompositionError : public Error {
 public:
  using Error::Error;
};

class FitError : public Error {
 public:
  using Error::Error;
};

/// Configuration problems. `key` names the offending entry and `line` is the
/// 1-based line in the config file (0 when unknown).
class ConfigError : public Error {
 public:
  ConfigError(const std::string& what, std::string key = {}, int line = 0)
      : Error(what), key_(std::move(key)), line_(line) {}
  const std::string& key() const { return key_; }
  int line() const { return line_; }

 private:
  std::string key_;
  int line_;
};

}  // namespace sgdlab
