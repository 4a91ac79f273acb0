#include "gebc/error.h"

namespace gebc {

std::string_view error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInternal: return "Internal";
    case ErrorCode::kInvalidConfig: return "InvalidConfig";
    case ErrorCode::kMalformedAnnotation: return "MalformedAnnotation";
    case ErrorCode::kInvariantViolation: return "InvariantViolation";
    case ErrorCode::kIoFailure: return "IoFailure";
    case ErrorCode::kCorruptCache: return "CorruptCache";
    case ErrorCode::kCorruptCheckpoint: return "CorruptCheckpoint";
    case ErrorCode::kConfigMismatch: return "ConfigMismatch";
    case ErrorCode::kCacheMiss: return "CacheMiss";
    case ErrorCode::kMissingPrediction: return "MissingPrediction";
    case ErrorCode::kNonFiniteLoss: return "NonFiniteLoss";
    case ErrorCode::kExtractorUnavailable: return "ExtractorUnavailable";
    case ErrorCode::kShapeMismatch: return "ShapeMismatch";
    case ErrorCode::kInvalidStride: return "InvalidStride";
    case ErrorCode::kInvalidBox: return "InvalidBox";
    case ErrorCode::kDomainError: return "DomainError";
    case ErrorCode::kPositionOverflow: return "PositionOverflow";
    case ErrorCode::kInvalidSchedule: return "InvalidSchedule";
    case ErrorCode::kEmptyTarget: return "EmptyTarget";
    case ErrorCode::kTokenizationFailure: return "TokenizationFailure";
    case ErrorCode::kEmptyCorpus: return "EmptyCorpus";
  }
  return "Unknown";
}

}  // namespace gebc
