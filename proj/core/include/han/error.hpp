#pragma once

#include <stdexcept>
#include <string>

namespace han {

/// Base class of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A precondition or invariant on an argument was violated.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// Experiment configuration rejected; `field()` is a JSON-pointer-like path.
class ConfigError : public Error {
 public:
  ConfigError(std::string field, const std::string& message)
      : Error(field + ": " + message), field_(std::move(field)) {}

  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

}  // namespace han
