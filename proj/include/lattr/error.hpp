#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace lattr {

// Base of every error raised by the library. The CLI maps subclasses to exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class RangeError : public Error {
 public:
  using Error::Error;
};

// Malformed bytes in a weight file. `offset` is the byte position where parsing gave up.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t offset)
      : Error(what + " (at byte offset " + std::to_string(offset) + ")"), offset_(offset) {}
  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

class ModelError : public Error {
 public:
  using Error::Error;
};

class MissingTensorError : public ModelError {
 public:
  explicit MissingTensorError(const std::string& name)
      : ModelError("missing tensor '" + name + "'"), name_(name) {}
  const std::string& name() const noexcept { return name_; }

 private:
  std::string name_;
};

class TensorShapeError : public ModelError {
 public:
  using ModelError::ModelError;
};

class NonFiniteWeightError : public ModelError {
 public:
  using ModelError::ModelError;
};

// Invalid user data (datasets, alignment files). `line` is 1-based, 0 when not applicable.
class DataError : public Error {
 public:
  DataError(const std::string& what, std::size_t line = 0)
      : Error(line ? what + " (line " + std::to_string(line) + ")" : what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

}  // namespace lattr
