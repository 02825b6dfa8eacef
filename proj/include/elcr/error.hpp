#pragma once

#include <stdexcept>

namespace elcr {

/// Malformed or inconsistent input data (CLI exit code 2).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A likelihood maximization that could not produce a usable point (CLI exit code 3).
class OptimizationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace elcr
