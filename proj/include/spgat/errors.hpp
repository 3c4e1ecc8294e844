#pragma once

#include <stdexcept>
#include <string>

namespace spgat {

// Exit-code categories used by the CLI: usage 2, config 3, data/format 4,
// numeric 5.
enum class ErrorKind : int {
  kUsage = 2,
  kConfig = 3,
  kData = 4,
  kNumeric = 5,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const { return kind_; }
  int exit_code() const { return static_cast<int>(kind_); }

 private:
  ErrorKind kind_;
};

// Inconsistent tensor extents or mismatched operand shapes.
struct ShapeError : Error {
  explicit ShapeError(const std::string& m) : Error(ErrorKind::kNumeric, m) {}
};

// A primitive produced or was handed a non-finite value.
struct NumericError : Error {
  explicit NumericError(const std::string& m) : Error(ErrorKind::kNumeric, m) {}
};

// Backward was requested for a tensor the tape never produced.
struct TapeError : Error {
  explicit TapeError(const std::string& m) : Error(ErrorKind::kNumeric, m) {}
};

struct ConfigError : Error {
  explicit ConfigError(const std::string& m) : Error(ErrorKind::kConfig, m) {}
};

// Malformed, truncated, or otherwise unusable on-disk data.
struct FormatError : Error {
  explicit FormatError(const std::string& m) : Error(ErrorKind::kData, m) {}
};

struct SplitError : Error {
  explicit SplitError(const std::string& m) : Error(ErrorKind::kData, m) {}
};

struct LabelError : Error {
  explicit LabelError(const std::string& m) : Error(ErrorKind::kData, m) {}
};

struct EvalError : Error {
  explicit EvalError(const std::string& m) : Error(ErrorKind::kData, m) {}
};

struct UsageError : Error {
  explicit UsageError(const std::string& m) : Error(ErrorKind::kUsage, m) {}
};

}  // namespace spgat
