#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace probeguard {

// Base class for every data/validation failure raised by the library. The CLI
// maps these to exit code 1.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Input does not have the expected format (bad magic, version, schema).
class FormatError : public Error {
 public:
  using Error::Error;
};

// Input has the right format but is truncated or internally inconsistent.
class CorruptionError : public Error {
 public:
  CorruptionError(const std::string& what, std::uint64_t offset)
      : Error(what + " at byte offset " + std::to_string(offset)), offset_(offset) {}

  std::uint64_t offset() const { return offset_; }

 private:
  std::uint64_t offset_;
};

// A precondition or type invariant was violated by the caller's data.
class ValidationError : public Error {
 public:
  using Error::Error;
};

}  // namespace probeguard
