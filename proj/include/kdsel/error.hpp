// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace kdsel {

/// Root of every error raised by the toolkit.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Caller handed us something outside an operation's domain.
class InvalidInput : public Error {
 public:
  using Error::Error;
};
class InvalidArgument : public InvalidInput {
 public:
  using InvalidInput::InvalidInput;
};
class EmptyInput : public InvalidInput {
 public:
  using InvalidInput::InvalidInput;
};

// Numerically ill-posed results.
class NumericError : public Error {
 public:
  using Error::Error;
};
class DegenerateAggregate : public NumericError {
 public:
  using NumericError::NumericError;
};
class UndefinedCorrelation : public NumericError {
 public:
  using NumericError::NumericError;
};
class Divergence : public NumericError {
 public:
  using NumericError::NumericError;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Malformed LGTS / checkpoint containers.
class FormatError : public IoError {
 public:
  using IoError::IoError;
};
class BadMagic : public FormatError {
 public:
  using FormatError::FormatError;
};
class UnsupportedVersion : public FormatError {
 public:
  using FormatError::FormatError;
};
class UnsupportedDtype : public FormatError {
 public:
  using FormatError::FormatError;
};
class ShapeMismatch : public FormatError {
 public:
  using FormatError::FormatError;
};
class ChecksumMismatch : public FormatError {
 public:
  using FormatError::FormatError;
};
class NonFiniteValue : public FormatError {
 public:
  using FormatError::FormatError;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace kdsel
