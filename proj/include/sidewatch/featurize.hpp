// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "sidewatch/common.hpp"
#include "sidewatch/telemetry.hpp"

#include <array>
#include <cstddef>
#include <deque>
#include <vector>

namespace sidewatch::features {

struct NormStats {
  RowVector mean;
  RowVector std;  // every entry > 0

  std::size_t size() const { return static_cast<std::size_t>(mean.size()); }
};

/// Population mean/std per column. Columns with zero variance get std = 1.
NormStats zscore_fit(const Matrix& rows);
/// Fits over the rows of several matrices at once, as if they were stacked.
NormStats zscore_fit(const std::vector<const Matrix*>& parts);
Matrix zscore_apply(const NormStats& stats, const Matrix& rows);

/// Causal rolling mean: row i averages rows max(0, i-window+1)..i.
Matrix rolling_mean(const Matrix& series, std::size_t window);
/// Decimation: row k of the result is row k*factor of the input; floor(T/factor) rows.
Matrix downsample(const Matrix& series, std::size_t factor);

/// Multi-resolution view settings. Durations are converted to sample counts at the
/// trace's sampling period; window lengths are in samples of the respective branch.
struct BranchConfig {
  double smooth_short_s = 2.5;
  double smooth_long_s = 12.5;
  double down_mid_s = 5.0;
  double down_long_s = 12.5;
  std::size_t raw_window = 128;
  std::size_t down_window = 64;
};

struct BranchSizes {
  std::size_t smooth_short = 5;
  std::size_t smooth_long = 25;
  std::size_t down_mid = 10;
  std::size_t down_long = 25;
  std::size_t raw_window = 128;
  std::size_t down_window = 64;

  bool operator==(const BranchSizes&) const = default;
};

BranchSizes resolve_branch_sizes(const BranchConfig& config, double sample_period_s);

inline constexpr std::size_t kBranchCount = 5;
enum class Branch : std::size_t { kRaw = 0, kSmoothShort, kSmoothLong, kDownMid, kDownLong };

struct BranchSet {
  Matrix raw;
  Matrix smooth_short;
  Matrix smooth_long;
  Matrix down_mid;
  Matrix down_long;
  BranchSizes sizes;

  const Matrix& branch(Branch b) const;
};

BranchSet make_branch_set(const Matrix& rows, const BranchSizes& sizes);

/// Window geometry of one branch inside its front-padded series: the padded series is
/// `pad` copies of raw row 0 followed by the branch rows, and the window for trace
/// row i starts at `window_start(i)` and spans `length` rows.
struct WindowGeometry {
  std::size_t pad = 0;
  std::size_t length = 0;
  std::size_t factor = 1;  // 1 for raw and smoothed branches
  std::size_t window_start(std::size_t row) const;
};

WindowGeometry branch_geometry(const BranchSizes& sizes, Branch b);

using RowWindows = std::array<Matrix, kBranchCount>;

/// Causal look-back windows for trace row i. Raw/smoothed windows end at row i. A
/// decimated row k counts as available at row i once its block of `factor` rows has
/// completed, i.e. k < floor((i+1)/factor); this makes windows independent of rows > i.
/// Short windows are front-padded with the earliest row (decimated row 0 is raw row 0).
RowWindows make_row_windows(const BranchSet& branches, std::size_t row);

/// Incremental counterpart of make_branch_set + make_row_windows for a live stream.
/// Rows are pushed one at a time; windows() returns exactly (bit for bit) what
/// make_row_windows would return for the latest row of the full series. Only the
/// history the windows and running sums need is retained.
class WindowStream {
 public:
  // Retained state, exposed for checkpointing.
  struct State {
    std::size_t rows = 0;
    RowVector first;
    RowVector sum_short;
    RowVector sum_long;
    std::array<std::deque<RowVector>, kBranchCount> history;  // newest at the back
  };

  WindowStream() = default;
  WindowStream(const BranchSizes& sizes, std::size_t width);

  void push(const RowVector& row);
  /// Windows for the most recently pushed row; IndexOutOfRange before the first push.
  RowWindows windows() const;
  std::size_t rows() const { return state_.rows; }
  const BranchSizes& sizes() const { return sizes_; }
  const State& state() const { return state_; }
  void restore(State state);

 private:
  std::size_t total(Branch b) const;

  BranchSizes sizes_;
  std::size_t width_ = 0;
  State state_;
};

struct SequenceBatch {
  std::vector<Matrix> sequences;
  std::vector<int> labels;
  std::vector<std::size_t> source;  // index of the originating trace
  std::vector<std::size_t> start;   // first row of the chunk within that trace
  std::size_t length = 0;
};

/// Majority vote over row labels; ties count as malicious.
int sequence_label(const std::vector<int>& labels, std::size_t begin, std::size_t length);

/// Non-overlapping consecutive chunks of `length` rows from row 0; remainders dropped.
SequenceBatch chunk_sequences(const std::vector<telemetry::Trace>& traces, std::size_t length);

}  // namespace sidewatch::features
