#pragma once

#include <stdexcept>
#include <string>

namespace icehrnet {

// Numeric values double as CLI exit codes and C API status codes.
enum class ErrorCode : int {
  kOk = 0,
  kValidation = 1,
  kDivergence = 2,
  kZeroShotViolation = 3,
  kIo = 4,
  kInternal = 5,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

class ValidationError : public Error {
 public:
  explicit ValidationError(const std::string& what) : Error(ErrorCode::kValidation, what) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& what) : Error(ErrorCode::kIo, what) {}
};

class DivergenceError : public Error {
 public:
  DivergenceError(long iteration, const std::string& what)
      : Error(ErrorCode::kDivergence, what), iteration_(iteration) {}
  long iteration() const noexcept { return iteration_; }

 private:
  long iteration_;
};

// Raised when a zero-shot arm could observe target-domain training labels.
class ZeroShotViolation : public Error {
 public:
  explicit ZeroShotViolation(const std::string& what) : Error(ErrorCode::kZeroShotViolation, what) {}
};

}  // namespace icehrnet
