#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace evs {

// Invalid configuration, hyperparameters, or violated operation precondition.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed input data. `offset` is a byte offset for binary inputs and a
// 1-based line number for text inputs.
class ParseError : public std::runtime_error {
 public:
  explicit ParseError(const std::string& msg) : std::runtime_error(msg), offset_(0) {}

  ParseError(const std::string& msg, std::uint64_t offset)
      : std::runtime_error(msg + " (at offset " + std::to_string(offset) + ")"),
        offset_(offset) {}

  std::uint64_t offset() const noexcept { return offset_; }

 private:
  std::uint64_t offset_;
};

}  // namespace evs
