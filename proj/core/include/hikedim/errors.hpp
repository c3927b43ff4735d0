#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace hikedim {

// Caller passed an out-of-contract value (bad sizes, nonpositive bandwidth, ...).
class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// An input file violates its format. Carries the 1-based line number when known
// (0 for binary formats or when no line applies).
class FormatError : public std::runtime_error {
 public:
  explicit FormatError(const std::string& msg, std::size_t line = 0)
      : std::runtime_error(line ? msg + " (line " + std::to_string(line) + ")" : msg),
        line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

// Input is well-formed but unusable: all points coincide, a degree vanishes, ...
class DegenerateInput : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A non-finite value surfaced while evaluating entries of the operator.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace hikedim
