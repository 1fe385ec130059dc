#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace heal {

enum class ErrorCode {
  EmptyTrajectory,
  TokenAlignment,
  BackendUnavailable,
  ContextExceeded,
  CapabilityMissing,
  MalformedLogprobs,
  TemplateError,
  Precondition,
  TraceTooShort,
  WindowEmpty,
  Unscorable,
  StageIncomplete,
  DecompositionMismatch,
  Config,
  Io,
  Interrupted,
};

std::string_view to_string(ErrorCode code);

/// Every failure raised by the library carries one of the codes above so
/// callers (and the CLI exit-code mapping) can dispatch without parsing text.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message),
        code_(code) {}

  ErrorCode code() const noexcept { return code_; }

  /// Transport-level failures may succeed on a later attempt.
  bool retryable() const noexcept { return code_ == ErrorCode::BackendUnavailable; }

 private:
  ErrorCode code_;
};

}  // namespace heal
