// SPDX-License-Identifier: Apache-2.0
#include "sidewatch/common.hpp"
#include "sidewatch/error.hpp"

namespace sidewatch {

std::string_view error_name(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::kInvalidArgument: return "InvalidArgument";
    case ErrorCode::kIoFailure: return "IoFailure";
    case ErrorCode::kMissingColumn: return "MissingColumn";
    case ErrorCode::kRaggedRow: return "RaggedRow";
    case ErrorCode::kNonMonotonicTime: return "NonMonotonicTime";
    case ErrorCode::kEmptyTrace: return "EmptyTrace";
    case ErrorCode::kBadCell: return "BadCell";
    case ErrorCode::kMalformedName: return "MalformedName";
    case ErrorCode::kUnknownCategory: return "UnknownCategory";
    case ErrorCode::kBadOnset: return "BadOnset";
    case ErrorCode::kTooFewRows: return "TooFewRows";
    case ErrorCode::kIndexOutOfRange: return "IndexOutOfRange";
    case ErrorCode::kShapeMismatch: return "ShapeMismatch";
    case ErrorCode::kKernelTooLong: return "KernelTooLong";
    case ErrorCode::kStaleCache: return "StaleCache";
    case ErrorCode::kBadShape: return "BadShape";
    case ErrorCode::kNoData: return "NoData";
    case ErrorCode::kWrongSequenceLength: return "WrongSequenceLength";
    case ErrorCode::kVersionMismatch: return "VersionMismatch";
    case ErrorCode::kCorruptArtifact: return "CorruptArtifact";
    case ErrorCode::kAlertBeforeOnset: return "AlertBeforeOnset";
    case ErrorCode::kOutOfOrderRow: return "OutOfOrderRow";
    case ErrorCode::kInsufficientStratum: return "InsufficientStratum";
    case ErrorCode::kEmptyPopulation: return "EmptyPopulation";
    case ErrorCode::kNoSequences: return "NoSequences";
    case ErrorCode::kBadSpec: return "BadSpec";
    case ErrorCode::kBadConfig: return "BadConfig";
  }
  return "Unknown";
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b) {
  // splitmix64 finalizer over a simple combination; cheap and well mixed.
  std::uint64_t z = base + 0x9e3779b97f4a7c15ULL * (a + 1) + 0xbf58476d1ce4e5b9ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace sidewatch
