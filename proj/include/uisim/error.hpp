#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace uisim {

// Stable error codes. The string form (error_code_name) is part of the
// HTTP problem-document and CLI JSON contracts and must not change.
enum class ErrorCode {
  kSyntaxError,
  kBoundsError,
  kDepthError,
  kLayoutTooLarge,
  kResolutionError,
  kInvalidImage,
  kInvalidAction,
  kInvalidGraph,
  kBackendUnavailable,
  kInvalidPrediction,
  kNoTransition,
  kNodeNotFound,
  kSessionNotFound,
  kStoreIoError,
  kCorruptSession,
  kInvalidRequest,
  kAnnotatorUnavailable,
  kInvalidAnnotation,
  kConfigError,
  kDimensionMismatch,
  kTooFewSamples,
  kNumericalFailure,
  kIncomparableReports,
  kBindError,
};

std::string_view error_code_name(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message, std::string detail = {})
      : std::runtime_error(message), code_(code), detail_(std::move(detail)) {}

  ErrorCode code() const { return code_; }
  std::string_view code_name() const { return error_code_name(code_); }

  // Pipeline stage that raised the error ("layout" or "render" for steps).
  const std::optional<std::string>& stage() const { return stage_; }
  Error& with_stage(std::string stage) {
    stage_ = std::move(stage);
    return *this;
  }

  // Free-form payload, e.g. the raw backend text of an InvalidPrediction.
  const std::string& detail() const { return detail_; }

 private:
  ErrorCode code_;
  std::optional<std::string> stage_;
  std::string detail_;
};

// Parse failure with a 1-based source position.
class SyntaxError : public Error {
 public:
  SyntaxError(const std::string& message, int line, int column)
      : Error(ErrorCode::kSyntaxError,
              "line " + std::to_string(line) + ", column " +
                  std::to_string(column) + ": " + message),
        line_(line),
        column_(column) {}

  int line() const { return line_; }
  int column() const { return column_; }

 private:
  int line_;
  int column_;
};

}  // namespace uisim
