#pragma once

#include <stdexcept>
#include <string>

namespace dualmamba {

// Operand shapes do not satisfy an operation's signature.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// NaN/Inf produced, or a numeric precondition (e.g. positive timestep) violated.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed on-disk data (cube, label raster, checkpoint).
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class BadMagicError : public FormatError {
 public:
  using FormatError::FormatError;
};

class UnsupportedVersionError : public FormatError {
 public:
  using FormatError::FormatError;
};

// File ends before the bytes its header promises.
class TruncatedError : public FormatError {
 public:
  using FormatError::FormatError;
};

// Header dimensions are zero, inconsistent, or disagree with a companion file.
class DimensionError : public FormatError {
 public:
  using FormatError::FormatError;
};

// Invalid model or training configuration.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Misuse of the autodiff machinery (backward without tape, missing grads...).
class AutodiffError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

}  // namespace dualmamba
