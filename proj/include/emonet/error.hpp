#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace emonet {

// Every failure the library reports carries one of these codes. The CLI maps
// them onto exit statuses (IoError -> 3, Usage -> 2, everything else -> 4).
enum class ErrorCode {
  Usage,
  IoError,
  FormatError,
  TruncatedFile,
  UnknownLabel,
  InvalidConfig,
  InvalidArgument,
  InvalidCutoff,
  NonFiniteInput,
  DegenerateSignal,
  NotEnoughSamples,
  ZeroPowerSignal,
  TooFewTrials,
  ShapeMismatch,
  BatchTooSmall,
  NonFiniteLoss,
  EmptyEvalSet,
};

std::string_view error_code_name(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(error_code_name(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) { throw Error(code, message); }

inline void require(bool condition, ErrorCode code, const std::string& message) {
  if (!condition) fail(code, message);
}

}  // namespace emonet
