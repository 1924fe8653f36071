#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace pcnn {

// Shape or dimension disagreement between operands.
class DimensionError : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

// Invalid settings: bad config keys, incompatible model/data geometry.
class ConfigError : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

// NaN/Inf where finite values are required.
class NumericError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

// Malformed or truncated binary file; carries the byte offset where reading failed.
class FormatError : public std::runtime_error {
public:
  FormatError(const std::string& what, std::uint64_t offset)
      : std::runtime_error(what + " (at byte offset " + std::to_string(offset) + ")"),
        offset_(offset) {}

  std::uint64_t offset() const noexcept { return offset_; }

private:
  std::uint64_t offset_;
};

}  // namespace pcnn
