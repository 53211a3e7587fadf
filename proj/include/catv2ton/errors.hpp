#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace catv2ton {

// Base for every error the library throws. Callers that only need a
// message can catch this; the CLI maps subclasses to exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor extents disagree with what an operation requires.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Invalid configuration value (kernel sizes, probabilities, schedule bounds).
class ConfigError : public Error {
 public:
  using Error::Error;
};

// A caller-side precondition was violated (non-binary mask, non-scalar loss).
class ContractError : public Error {
 public:
  using Error::Error;
};

class RangeError : public Error {
 public:
  using Error::Error;
};

// Token streams that should line up one-to-one do not.
class AlignmentError : public Error {
 public:
  using Error::Error;
};

// Clip windows and the frames handed to them disagree.
class PlanningError : public Error {
 public:
  using Error::Error;
};

// Malformed file content. `offset` is the byte position where parsing failed.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t offset)
      : Error(what + " (at byte " + std::to_string(offset) + ")"), offset_(offset) {}

  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

}  // namespace catv2ton
