#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace mcac {

// Dimension or architecture mismatch between tensors/networks.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Invalid configuration value (out-of-range rate, unknown key, ...).
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// NaN/Inf appeared in a gradient, parameter or loss.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// API used out of contract (stepping a finished episode, sampling too early).
class UsageError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Malformed data; `index()` is the position of the first offending element.
class ValidationError : public std::invalid_argument {
 public:
  ValidationError(const std::string& what, std::size_t index)
      : std::invalid_argument(what), index_(index) {}
  std::size_t index() const noexcept { return index_; }

 private:
  std::size_t index_;
};

}  // namespace mcac
