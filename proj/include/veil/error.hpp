#pragma once

#include <stdexcept>
#include <string>

namespace veil {

// Base for all library errors. Callers that only care about success/failure
// catch this; the CLI maps it to a nonzero exit code with the message.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A precondition on a config or argument was violated.
class ValidationError : public Error {
 public:
  using Error::Error;
};

// Array shapes disagree with what an operation requires.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// A runtime invariant (frozen parameters, label bijection, ...) was broken.
class InvariantViolation : public Error {
 public:
  using Error::Error;
};

// File system or decoding failure.
class IoError : public Error {
 public:
  using Error::Error;
};

// Training produced a NaN or otherwise unusable state.
class NumericalError : public Error {
 public:
  using Error::Error;
};

}  // namespace veil
