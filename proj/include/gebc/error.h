#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace gebc {

// Every error class maps to a distinct process exit code (see README).
enum class ErrorCode : int {
  kInternal = 1,
  kInvalidConfig = 2,
  kMalformedAnnotation = 3,
  kInvariantViolation = 4,
  kIoFailure = 5,
  kCorruptCache = 6,
  kCorruptCheckpoint = 7,
  kConfigMismatch = 8,
  kCacheMiss = 9,
  kMissingPrediction = 10,
  kNonFiniteLoss = 11,
  kExtractorUnavailable = 12,
  kShapeMismatch = 13,
  kInvalidStride = 14,
  kInvalidBox = 15,
  kDomainError = 16,
  kPositionOverflow = 17,
  kInvalidSchedule = 18,
  kEmptyTarget = 19,
  kTokenizationFailure = 20,
  kEmptyCorpus = 21,
};

std::string_view error_code_name(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }
  int exit_code() const noexcept { return static_cast<int>(code_); }

 private:
  ErrorCode code_;
};

#define GEBC_DEFINE_ERROR(Name)                                        \
  class Name : public Error {                                          \
   public:                                                             \
    explicit Name(const std::string& message)                          \
        : Error(ErrorCode::k##Name, message) {}                        \
  };

GEBC_DEFINE_ERROR(InvalidConfig)
GEBC_DEFINE_ERROR(MalformedAnnotation)
GEBC_DEFINE_ERROR(InvariantViolation)
GEBC_DEFINE_ERROR(IoFailure)
GEBC_DEFINE_ERROR(CorruptCache)
GEBC_DEFINE_ERROR(CorruptCheckpoint)
GEBC_DEFINE_ERROR(ConfigMismatch)
GEBC_DEFINE_ERROR(CacheMiss)
GEBC_DEFINE_ERROR(MissingPrediction)
GEBC_DEFINE_ERROR(NonFiniteLoss)
GEBC_DEFINE_ERROR(ExtractorUnavailable)
GEBC_DEFINE_ERROR(ShapeMismatch)
GEBC_DEFINE_ERROR(InvalidStride)
GEBC_DEFINE_ERROR(InvalidBox)
GEBC_DEFINE_ERROR(DomainError)
GEBC_DEFINE_ERROR(PositionOverflow)
GEBC_DEFINE_ERROR(InvalidSchedule)
GEBC_DEFINE_ERROR(EmptyTarget)
GEBC_DEFINE_ERROR(TokenizationFailure)
GEBC_DEFINE_ERROR(EmptyCorpus)

#undef GEBC_DEFINE_ERROR

}  // namespace gebc
