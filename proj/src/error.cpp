#include "emonet/error.hpp"

namespace emonet {

std::string_view error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::Usage: return "UsageError";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::FormatError: return "FormatError";
    case ErrorCode::TruncatedFile: return "TruncatedFile";
    case ErrorCode::UnknownLabel: return "UnknownLabel";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::InvalidCutoff: return "InvalidCutoff";
    case ErrorCode::NonFiniteInput: return "NonFiniteInput";
    case ErrorCode::DegenerateSignal: return "DegenerateSignal";
    case ErrorCode::NotEnoughSamples: return "NotEnoughSamples";
    case ErrorCode::ZeroPowerSignal: return "ZeroPowerSignal";
    case ErrorCode::TooFewTrials: return "TooFewTrials";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::BatchTooSmall: return "BatchTooSmall";
    case ErrorCode::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorCode::EmptyEvalSet: return "EmptyEvalSet";
  }
  return "Error";
}

}  // namespace emonet
