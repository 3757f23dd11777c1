#pragma once

#include <stdexcept>
#include <string>

namespace egmr {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor or image dimensions do not satisfy an operation's contract.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A scalar argument is out of its allowed range.
class ParameterError : public Error {
 public:
  using Error::Error;
};

/// Coordinates outside the sensor frame.
class CoordinateError : public Error {
 public:
  using Error::Error;
};

/// Malformed file content.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// A value-level precondition (range, normalization) is violated.
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values where finite ones are required.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Input data that cannot be processed (non-finite values and similar).
class InputError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace egmr
