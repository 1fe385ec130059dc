#include "heal/error.hpp"

namespace heal {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::EmptyTrajectory: return "EmptyTrajectory";
    case ErrorCode::TokenAlignment: return "TokenAlignment";
    case ErrorCode::BackendUnavailable: return "BackendUnavailable";
    case ErrorCode::ContextExceeded: return "ContextExceeded";
    case ErrorCode::CapabilityMissing: return "CapabilityMissing";
    case ErrorCode::MalformedLogprobs: return "MalformedLogprobs";
    case ErrorCode::TemplateError: return "TemplateError";
    case ErrorCode::Precondition: return "Precondition";
    case ErrorCode::TraceTooShort: return "TraceTooShort";
    case ErrorCode::WindowEmpty: return "WindowEmpty";
    case ErrorCode::Unscorable: return "Unscorable";
    case ErrorCode::StageIncomplete: return "StageIncomplete";
    case ErrorCode::DecompositionMismatch: return "DecompositionMismatch";
    case ErrorCode::Config: return "Config";
    case ErrorCode::Io: return "Io";
    case ErrorCode::Interrupted: return "Interrupted";
  }
  return "Unknown";
}

}  // namespace heal
