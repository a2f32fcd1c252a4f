#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace splab {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes disagree with an op signature.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A computed value left the finite range.
class OverflowError : public Error {
 public:
  using Error::Error;
};

/// Operation invoked in the wrong lifecycle state (e.g. backward before forward).
class StateError : public Error {
 public:
  using Error::Error;
};

class ArgumentError : public Error {
 public:
  using Error::Error;
};

/// Numerically degenerate input (zero saliency, non-finite objective, ...).
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Model description does not chain.
class BuildError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed binary input. Carries the byte offset where decoding failed.
class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::size_t offset)
      : Error(what + " (at byte offset " + std::to_string(offset) + ")"), offset_(offset) {}
  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

}  // namespace splab
