#pragma once

#include <stdexcept>
#include <string>

namespace tinyrl {

// Base of every error raised by the library. The CLI maps ConfigError to exit
// code 1 and everything else to exit code 2.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

// NaN/Inf produced anywhere in a computation. Never propagated silently.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Precondition violation on an argument (bad dimensions, out-of-range value).
class ValueError : public Error {
 public:
  using Error::Error;
};

// Operation invoked in the wrong state, e.g. backward() before forward().
class StateError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace tinyrl
