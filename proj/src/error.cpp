#include "ciss/error.hpp"

namespace ciss {

const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::MissingFile: return "missing file";
    case ErrorCode::UnsupportedFormat: return "unsupported format";
    case ErrorCode::CorruptData: return "corrupt data";
    case ErrorCode::DimensionMismatch: return "dimension mismatch";
    case ErrorCode::OutOfBounds: return "out of bounds";
    case ErrorCode::LengthMismatch: return "length mismatch";
    case ErrorCode::LayoutMismatch: return "layout mismatch";
    case ErrorCode::AnchorTooSmall: return "anchor too small";
    case ErrorCode::NoValidBins: return "no valid bins";
    case ErrorCode::InsufficientBins: return "insufficient bins";
    case ErrorCode::VersionMismatch: return "version mismatch";
    case ErrorCode::MalformedFile: return "malformed file";
    case ErrorCode::InvariantViolation: return "invariant violation";
    case ErrorCode::MissingCategory: return "missing category";
    case ErrorCode::InfeasibleConfig: return "infeasible config";
    case ErrorCode::InvalidArgument: return "invalid argument";
    case ErrorCode::IoFailure: return "i/o failure";
  }
  return "unknown";
}

}  // namespace ciss
