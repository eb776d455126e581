// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace sidewatch {

// Numbering is stable: the C API exposes these values directly as status codes.
enum class ErrorCode : int {
  kInvalidArgument = 1,
  kIoFailure = 2,
  kMissingColumn = 3,
  kRaggedRow = 4,
  kNonMonotonicTime = 5,
  kEmptyTrace = 6,
  kBadCell = 7,
  kMalformedName = 8,
  kUnknownCategory = 9,
  kBadOnset = 10,
  kTooFewRows = 11,
  kIndexOutOfRange = 12,
  kShapeMismatch = 13,
  kKernelTooLong = 14,
  kStaleCache = 15,
  kBadShape = 16,
  kNoData = 17,
  kWrongSequenceLength = 18,
  kVersionMismatch = 19,
  kCorruptArtifact = 20,
  kAlertBeforeOnset = 21,
  kOutOfOrderRow = 22,
  kInsufficientStratum = 23,
  kEmptyPopulation = 24,
  kNoSequences = 25,
  kBadSpec = 26,
  kBadConfig = 27,
};

std::string_view error_name(ErrorCode code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(error_name(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace sidewatch
