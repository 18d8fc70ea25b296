#pragma once

#include <stdexcept>
#include <string>

namespace kronvb {

// Mirrors the exit codes used by the C API and the CLI.
enum class ErrorCode : int {
  kOk = 0,
  kValidation = 1,
  kNumeric = 2,
  kIo = 3,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string &what)
      : std::runtime_error(what), code_(code) {}
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

class ValidationError : public Error {
 public:
  explicit ValidationError(const std::string &what)
      : Error(ErrorCode::kValidation, what) {}
};

class NumericError : public Error {
 public:
  explicit NumericError(const std::string &what)
      : Error(ErrorCode::kNumeric, what) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string &what) : Error(ErrorCode::kIo, what) {}
};

}  // namespace kronvb
