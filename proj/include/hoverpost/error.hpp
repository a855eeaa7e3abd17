#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace hoverpost {

enum class ErrorCode {
  kBadMagic,
  kUnsupportedDtype,
  kTruncatedPayload,
  kShapeMismatch,
  kIoFailure,
  kMissingClass,
  kUnknownClass,
  kUnmappedClass,
  kNonFinite,
  kLabelOutOfRange,
  kMarkerOutsideMask,
  kAllZeroCounts,
  kInvalidArgument,
};

std::string_view error_code_name(ErrorCode code);

/// Single exception type for the library; `code()` identifies the failure.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(error_code_name(code)) + ": " + what), code_(code) {}

  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace hoverpost
