#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace node_adapter {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes do not agree.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Input is numerically degenerate (zero-norm row, empty class mean, ...).
class DegenerateInputError : public Error {
 public:
  using Error::Error;
};

/// Malformed NAEB / NAPM payload. `offset()` is the byte position where parsing failed.
class FormatError : public Error {
 public:
  FormatError(std::uint64_t offset, const std::string& what)
      : Error("format error at byte " + std::to_string(offset) + ": " + what), offset_(offset) {}
  std::uint64_t offset() const noexcept { return offset_; }

 private:
  std::uint64_t offset_;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// Not enough rows/classes to satisfy a request (episode sampling, empty class).
class CapacityError : public Error {
 public:
  using Error::Error;
};

/// A solver or the training loop produced a non-finite value.
class DivergenceError : public Error {
 public:
  DivergenceError(long index, const std::string& what) : Error(what), index_(index) {}
  long index() const noexcept { return index_; }

 private:
  long index_;
};

/// Labels or classes that do not map onto the model's class set.
class MappingError : public Error {
 public:
  using Error::Error;
};

/// API misuse, e.g. differentiating with respect to a value from another tape.
class UsageError : public Error {
 public:
  using Error::Error;
};

}  // namespace node_adapter
