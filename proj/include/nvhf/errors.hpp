#pragma once

#include <stdexcept>
#include <string>

namespace nvhf {

// Malformed or inconsistent input data (CSV/JSON parsing, schema violations,
// cross-record references). CLI maps this to exit code 3.
class DataError : public std::runtime_error {
 public:
  explicit DataError(const std::string& what) : std::runtime_error(what) {}
};

// An iterative solver failed to converge. CLI maps this to exit code 4.
class ConvergenceError : public std::runtime_error {
 public:
  explicit ConvergenceError(const std::string& what)
      : std::runtime_error(what) {}
};

}  // namespace nvhf
