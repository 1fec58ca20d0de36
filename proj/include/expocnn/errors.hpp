#pragma once

#include <stdexcept>
#include <string>

namespace expocnn {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes do not agree (matmul inner dims, conv kernel vs input, ...).
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A tensor was requested with a zero or negative dimension.
class InvalidShapeError : public ShapeError {
 public:
  using ShapeError::ShapeError;
};

/// Argument outside its admissible domain (negative sigma, class index, NaN).
class ValueError : public Error {
 public:
  using Error::Error;
};

/// Rendered glyphs do not fit inside the canvas.
class LayoutError : public Error {
 public:
  using Error::Error;
};

class EmptyDatasetError : public Error {
 public:
  using Error::Error;
};

/// File-format errors. Each failure mode has its own type so callers can
/// distinguish them.
class FormatError : public Error {
 public:
  using Error::Error;
};

class BadMagicError : public FormatError {
 public:
  using FormatError::FormatError;
};

class TruncatedFileError : public FormatError {
 public:
  using FormatError::FormatError;
};

class VersionMismatchError : public FormatError {
 public:
  using FormatError::FormatError;
};

class ArchitectureMismatchError : public FormatError {
 public:
  using FormatError::FormatError;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace expocnn
