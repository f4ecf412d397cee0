#pragma once

#include <stdexcept>
#include <string>

namespace consim {

// Machine-readable failure categories. The CLI reports these verbatim in its
// stderr error JSON, so renaming one is a breaking change.
enum class ErrorCode {
  kInvalidArgument,
  kDimensionMismatch,
  kMalformedFile,
  kUnsupportedFormat,
  kMissingMember,
  kRowCountMismatch,
  kSchemaViolation,
  kNonFinite,
  kIo,
  kMissingStage,
};

const char* to_string(ErrorCode code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace consim
