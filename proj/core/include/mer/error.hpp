#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace mer {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor shapes that do not fit together.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Spatial arithmetic that does not produce an integral output size.
class GeometryError : public Error {
 public:
  using Error::Error;
};

/// A scalar argument outside its admissible range.
class ParameterError : public Error {
 public:
  using Error::Error;
};

/// A precondition on the caller was violated.
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Evaluation protocol cannot be formed from the given data.
class ProtocolError : public Error {
 public:
  using Error::Error;
};

/// Loss or activations became non-finite.
class NumericalError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// Malformed file content. `offset()` is the byte where parsing stopped.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t offset)
      : Error(what + " (at byte " + std::to_string(offset) + ")"), offset_(offset), message_(what) {}
  std::size_t offset() const noexcept { return offset_; }
  /// Message without the offset suffix.
  const std::string& message() const noexcept { return message_; }

 private:
  std::size_t offset_;
  std::string message_;
};

}  // namespace mer
