#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace ctrlns {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised for malformed or out-of-range configuration. Maps to CLI exit code 2.
class InvalidConfig : public Error {
 public:
  using Error::Error;
};

/// Raised when a computation produces non-finite values. Maps to CLI exit code 3.
class NumericError : public Error {
 public:
  NumericError(const std::string& what, std::ptrdiff_t step = -1)
      : Error(step >= 0 ? what + " (step " + std::to_string(step) + ")" : what), step_(step) {}
  std::ptrdiff_t step() const noexcept { return step_; }

 private:
  std::ptrdiff_t step_;
};

class FormatError : public Error {
 public:
  using Error::Error;
};

class GenerationError : public Error {
 public:
  using Error::Error;
};

}  // namespace ctrlns
