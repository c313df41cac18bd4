#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace wmark {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Shapes or sizes of two arguments disagree.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Training produced a NaN/inf loss.
class TrainingError : public Error {
 public:
  using Error::Error;
};

// Malformed file or artifact. `offset` is the byte position where parsing
// stopped, when known.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t offset)
      : Error(what + " (at byte offset " + std::to_string(offset) + ")"), offset_(offset) {}
  explicit ParseError(const std::string& what) : Error(what) {}

  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_ = 0;
};

// Artifact was written by an incompatible format version.
class VersionError : public Error {
 public:
  using Error::Error;
};

}  // namespace wmark
