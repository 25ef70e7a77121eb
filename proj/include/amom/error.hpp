#pragma once

#include <stdexcept>
#include <string>

namespace amom {

// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor extents do not conform to what an operation requires.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// NaN/Inf produced or consumed where finite values are required.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Invalid configuration value, unknown key or inconsistent flags.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Unreadable or malformed corpus / vocabulary / checkpoint data.
class DataError : public Error {
 public:
  using Error::Error;
};

}  // namespace amom
