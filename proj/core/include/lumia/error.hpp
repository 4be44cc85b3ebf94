#pragma once

#include <stdexcept>
#include <string>

namespace lumia {

enum class ErrorKind {
  kValidation,  // bad input, config, or precondition
  kFormat,      // unknown magic or version in a binary file
  kCorruption,  // structurally broken payload
  kIo,          // filesystem failure
  kRuntime,     // numerical or internal failure
};

/// Base of every error thrown by the toolkit. The kind drives CLI exit codes.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

class ValidationError : public Error {
 public:
  explicit ValidationError(const std::string& what) : Error(ErrorKind::kValidation, what) {}
};

class FormatError : public Error {
 public:
  explicit FormatError(const std::string& what) : Error(ErrorKind::kFormat, what) {}
};

class CorruptionError : public Error {
 public:
  CorruptionError(const std::string& what, std::size_t offset)
      : Error(ErrorKind::kCorruption, what + " at byte offset " + std::to_string(offset)),
        offset_(offset) {}
  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& what) : Error(ErrorKind::kIo, what) {}
};

class RuntimeError : public Error {
 public:
  explicit RuntimeError(const std::string& what) : Error(ErrorKind::kRuntime, what) {}
};

}  // namespace lumia
