#include "consim/types.hpp"

#include "consim/error.hpp"

namespace consim {

const char* to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::kInvalidArgument: return "invalid_argument";
    case ErrorCode::kDimensionMismatch: return "dimension_mismatch";
    case ErrorCode::kMalformedFile: return "malformed_file";
    case ErrorCode::kUnsupportedFormat: return "unsupported_format";
    case ErrorCode::kMissingMember: return "missing_member";
    case ErrorCode::kRowCountMismatch: return "row_count_mismatch";
    case ErrorCode::kSchemaViolation: return "schema_violation";
    case ErrorCode::kNonFinite: return "non_finite";
    case ErrorCode::kIo: return "io_error";
    case ErrorCode::kMissingStage: return "missing_stage";
  }
  return "unknown";
}

Index LinearHead::class_index(const std::string& label) const {
  for (std::size_t i = 0; i < class_labels.size(); ++i) {
    if (class_labels[i] == label) return static_cast<Index>(i);
  }
  return -1;
}

void require_finite(const Matrix& m, const char* what) {
  if (!m.allFinite()) {
    throw Error(ErrorCode::kNonFinite, std::string(what) + " contains NaN or Inf");
  }
}

}  // namespace consim
