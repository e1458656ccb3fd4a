#pragma once

#include <stdexcept>
#include <string>

namespace geomoe {

// Error taxonomy shared by every module. The CLI maps these onto exit codes:
// ValidationError/ConfigError/StateError/DimensionError -> 2, NumericError -> 3.

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ValidationError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class StateError : public Error {
 public:
  using Error::Error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace geomoe
