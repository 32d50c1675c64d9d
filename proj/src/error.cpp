#include "uisim/error.hpp"

namespace uisim {

std::string_view error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::kSyntaxError: return "SyntaxError";
    case ErrorCode::kBoundsError: return "BoundsError";
    case ErrorCode::kDepthError: return "DepthError";
    case ErrorCode::kLayoutTooLarge: return "LayoutTooLarge";
    case ErrorCode::kResolutionError: return "ResolutionError";
    case ErrorCode::kInvalidImage: return "InvalidImage";
    case ErrorCode::kInvalidAction: return "InvalidAction";
    case ErrorCode::kInvalidGraph: return "InvalidGraph";
    case ErrorCode::kBackendUnavailable: return "BackendUnavailable";
    case ErrorCode::kInvalidPrediction: return "InvalidPrediction";
    case ErrorCode::kNoTransition: return "NoTransition";
    case ErrorCode::kNodeNotFound: return "NodeNotFound";
    case ErrorCode::kSessionNotFound: return "SessionNotFound";
    case ErrorCode::kStoreIoError: return "StoreIoError";
    case ErrorCode::kCorruptSession: return "CorruptSession";
    case ErrorCode::kInvalidRequest: return "InvalidRequest";
    case ErrorCode::kAnnotatorUnavailable: return "AnnotatorUnavailable";
    case ErrorCode::kInvalidAnnotation: return "InvalidAnnotation";
    case ErrorCode::kConfigError: return "ConfigError";
    case ErrorCode::kDimensionMismatch: return "DimensionMismatch";
    case ErrorCode::kTooFewSamples: return "TooFewSamples";
    case ErrorCode::kNumericalFailure: return "NumericalFailure";
    case ErrorCode::kIncomparableReports: return "IncomparableReports";
    case ErrorCode::kBindError: return "BindError";
  }
  return "Unknown";
}

}  // namespace uisim
