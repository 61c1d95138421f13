#pragma once

#include <stdexcept>
#include <string>

namespace opacgp {

/// Caller supplied malformed arguments (empty sets, dimension mismatch, bad ranges).
class InputError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A factorization or objective evaluation could not be completed in floating point.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A tabular file does not match the requested column layout.
class SchemaError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed file contents (trace, checkpoint, state dump).
class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace opacgp
