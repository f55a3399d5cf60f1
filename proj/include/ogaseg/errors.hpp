#pragma once

#include <stdexcept>
#include <string>

namespace ogaseg {

/// Operand shapes violate an op's shape rule.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A forward op produced NaN/Inf, or a numeric procedure hit a non-finite value.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed file, bad magic, palette mismatch and similar I/O failures.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid configuration values or infeasible generation constraints.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

}  // namespace ogaseg
