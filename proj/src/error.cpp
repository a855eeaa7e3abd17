#include "hoverpost/error.hpp"

namespace hoverpost {

std::string_view error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::kBadMagic: return "BadMagic";
    case ErrorCode::kUnsupportedDtype: return "UnsupportedDtype";
    case ErrorCode::kTruncatedPayload: return "TruncatedPayload";
    case ErrorCode::kShapeMismatch: return "ShapeMismatch";
    case ErrorCode::kIoFailure: return "IoFailure";
    case ErrorCode::kMissingClass: return "MissingClass";
    case ErrorCode::kUnknownClass: return "UnknownClass";
    case ErrorCode::kUnmappedClass: return "UnmappedClass";
    case ErrorCode::kNonFinite: return "NonFinite";
    case ErrorCode::kLabelOutOfRange: return "LabelOutOfRange";
    case ErrorCode::kMarkerOutsideMask: return "MarkerOutsideMask";
    case ErrorCode::kAllZeroCounts: return "AllZeroCounts";
    case ErrorCode::kInvalidArgument: return "InvalidArgument";
  }
  return "Unknown";
}

}  // namespace hoverpost
