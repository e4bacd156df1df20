#pragma once

#include <stdexcept>
#include <cstddef>
#include <string>

namespace instformer {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Precondition violated by the caller (bad sizes, empty inputs, invalid configuration).
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// Tensor shapes incompatible with the requested operation.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A NaN or infinity appeared in a computed tensor or gradient.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// A file could not be opened or does not follow the expected binary layout.
class FormatError : public Error {
 public:
  using Error::Error;
};

class VersionMismatch : public FormatError {
 public:
  using FormatError::FormatError;
};

/// The file ends before the declared content.
class TruncatedFile : public FormatError {
 public:
  using FormatError::FormatError;
};

class ChecksumMismatch : public FormatError {
 public:
  ChecksumMismatch(const std::string& what, std::size_t record) : FormatError(what), record_(record) {}
  std::size_t record() const { return record_; }

 private:
  std::size_t record_;
};

}  // namespace instformer
