#pragma once

#include <stdexcept>
#include <string>

namespace ciss {

enum class ErrorCode {
  MissingFile,
  UnsupportedFormat,
  CorruptData,
  DimensionMismatch,
  OutOfBounds,
  LengthMismatch,
  LayoutMismatch,
  AnchorTooSmall,
  NoValidBins,
  InsufficientBins,
  VersionMismatch,
  MalformedFile,
  InvariantViolation,
  MissingCategory,
  InfeasibleConfig,
  InvalidArgument,
  IoFailure,
};

const char* to_string(ErrorCode code);

// Single exception type for the library; callers branch on code().
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace ciss
