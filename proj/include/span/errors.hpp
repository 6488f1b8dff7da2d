#pragma once

#include <stdexcept>
#include <string>

namespace span {

/// Raised when matrix or vector shapes passed to an operation do not agree.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when a linear system cannot be solved (rank deficient, no ridge).
class SingularSystemError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised when distribution parameters violate their invariants (asymmetric
/// or non positive definite covariance factors).
class InvalidParamsError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Malformed input file. The message carries a line or byte position.
class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace span
