#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace ltrnn {

// Bad input: malformed files, inconsistent shapes, out-of-range arguments.
// The CLI maps this family to exit code 2.
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class ParseError : public ValidationError {
 public:
  ParseError(const std::string& source, std::size_t line, const std::string& what)
      : ValidationError(source + ":" + std::to_string(line) + ": " + what), line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

// A model that loads fine but cannot be served by the requested engine
// (e.g. a tree with more than 64 leaves and the bitvector scorer).
class UnsupportedModelError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

// Timing-derived coefficients came out non-positive; usually a noisy machine.
class CalibrationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace ltrnn
