#pragma once

#include <stdexcept>
#include <string>

namespace spillover {

// Base for all library failures; what() carries a human-readable diagnostic.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed, missing, or unusable input data.
class DataError : public Error {
 public:
  using Error::Error;
};

// Estimation could not proceed (too few rows, degenerate panel, ...).
class EstimationError : public Error {
 public:
  using Error::Error;
};

// Non-finite values produced by a numerical routine.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Configuration rejected before any computation started.
class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace spillover
