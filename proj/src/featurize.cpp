// SPDX-License-Identifier: Apache-2.0
#include "sidewatch/featurize.hpp"

#include "sidewatch/error.hpp"

#include <algorithm>
#include <cmath>

namespace sidewatch::features {

NormStats zscore_fit(const std::vector<const Matrix*>& parts) {
  Eigen::Index cols = -1;
  std::size_t n = 0;
  for (const auto* p : parts) {
    if (cols >= 0 && p->cols() != cols) throw Error(ErrorCode::kShapeMismatch, "inconsistent feature widths");
    cols = p->cols();
    n += static_cast<std::size_t>(p->rows());
  }
  if (n < 2) throw Error(ErrorCode::kTooFewRows, "need at least 2 rows, got " + std::to_string(n));

  NormStats stats;
  stats.mean = RowVector::Zero(cols);
  for (const auto* p : parts) stats.mean += p->colwise().sum();
  stats.mean /= static_cast<double>(n);
  RowVector var = RowVector::Zero(cols);
  for (const auto* p : parts) var += (p->rowwise() - stats.mean).array().square().matrix().colwise().sum();
  var /= static_cast<double>(n);
  stats.std = var.array().sqrt().matrix();
  for (Eigen::Index c = 0; c < cols; ++c) {
    if (!(stats.std[c] > 0.0)) stats.std[c] = 1.0;
  }
  return stats;
}

NormStats zscore_fit(const Matrix& rows) { return zscore_fit(std::vector<const Matrix*>{&rows}); }

Matrix zscore_apply(const NormStats& stats, const Matrix& rows) {
  if (static_cast<std::size_t>(rows.cols()) != stats.size()) {
    throw Error(ErrorCode::kShapeMismatch, "normalization stats cover " + std::to_string(stats.size()) +
                                               " features, rows have " + std::to_string(rows.cols()));
  }
  return ((rows.rowwise() - stats.mean).array().rowwise() / stats.std.array()).matrix();
}

Matrix rolling_mean(const Matrix& series, std::size_t window) {
  if (window == 0) throw Error(ErrorCode::kInvalidArgument, "rolling window must be >= 1");
  Matrix out(series.rows(), series.cols());
  RowVector sum = RowVector::Zero(series.cols());
  const auto w = static_cast<Eigen::Index>(window);
  for (Eigen::Index i = 0; i < series.rows(); ++i) {
    sum += series.row(i);
    if (i >= w) sum -= series.row(i - w);
    out.row(i) = sum / static_cast<double>(std::min(i + 1, w));
  }
  return out;
}

Matrix downsample(const Matrix& series, std::size_t factor) {
  if (factor == 0) throw Error(ErrorCode::kInvalidArgument, "downsample factor must be >= 1");
  const auto f = static_cast<Eigen::Index>(factor);
  const Eigen::Index n = series.rows() / f;
  Matrix out(n, series.cols());
  for (Eigen::Index k = 0; k < n; ++k) out.row(k) = series.row(k * f);
  return out;
}

BranchSizes resolve_branch_sizes(const BranchConfig& config, double sample_period_s) {
  if (!(sample_period_s > 0.0)) throw Error(ErrorCode::kInvalidArgument, "sample period must be positive");
  const auto samples = [&](double seconds) {
    const auto n = std::llround(seconds / sample_period_s);
    if (n < 1) throw Error(ErrorCode::kInvalidArgument, "branch duration shorter than one sample");
    return static_cast<std::size_t>(n);
  };
  BranchSizes s;
  s.smooth_short = samples(config.smooth_short_s);
  s.smooth_long = samples(config.smooth_long_s);
  s.down_mid = samples(config.down_mid_s);
  s.down_long = samples(config.down_long_s);
  s.raw_window = config.raw_window;
  s.down_window = config.down_window;
  if (s.raw_window == 0 || s.down_window == 0) throw Error(ErrorCode::kInvalidArgument, "window length must be >= 1");
  return s;
}

const Matrix& BranchSet::branch(Branch b) const {
  switch (b) {
    case Branch::kRaw: return raw;
    case Branch::kSmoothShort: return smooth_short;
    case Branch::kSmoothLong: return smooth_long;
    case Branch::kDownMid: return down_mid;
    case Branch::kDownLong: return down_long;
  }
  return raw;
}

BranchSet make_branch_set(const Matrix& rows, const BranchSizes& sizes) {
  if (rows.rows() < 1) throw Error(ErrorCode::kInvalidArgument, "branch set needs at least one row");
  BranchSet set;
  set.raw = rows;
  set.smooth_short = rolling_mean(rows, sizes.smooth_short);
  set.smooth_long = rolling_mean(rows, sizes.smooth_long);
  set.down_mid = downsample(rows, sizes.down_mid);
  set.down_long = downsample(rows, sizes.down_long);
  set.sizes = sizes;
  return set;
}

std::size_t WindowGeometry::window_start(std::size_t row) const {
  return factor == 1 ? row : (row + 1) / factor;
}

WindowGeometry branch_geometry(const BranchSizes& sizes, Branch b) {
  switch (b) {
    case Branch::kRaw:
    case Branch::kSmoothShort:
    case Branch::kSmoothLong:
      return {sizes.raw_window - 1, sizes.raw_window, 1};
    case Branch::kDownMid:
      return {sizes.down_window, sizes.down_window, sizes.down_mid};
    case Branch::kDownLong:
      return {sizes.down_window, sizes.down_window, sizes.down_long};
  }
  return {};
}

RowWindows make_row_windows(const BranchSet& branches, std::size_t row) {
  const auto total = static_cast<std::size_t>(branches.raw.rows());
  if (row >= total) {
    throw Error(ErrorCode::kIndexOutOfRange, "row " + std::to_string(row) + " outside trace of " +
                                                 std::to_string(total) + " rows");
  }
  RowWindows out;
  const Eigen::Index cols = branches.raw.cols();
  for (std::size_t b = 0; b < kBranchCount; ++b) {
    const auto which = static_cast<Branch>(b);
    const Matrix& series = branches.branch(which);
    const WindowGeometry g = branch_geometry(branches.sizes, which);
    // Rows of this branch visible at `row`: [0, available).
    const std::size_t available =
        g.factor == 1 ? row + 1 : std::min((row + 1) / g.factor, static_cast<std::size_t>(series.rows()));
    Matrix window(static_cast<Eigen::Index>(g.length), cols);
    const std::size_t real = std::min(available, g.length);
    const std::size_t padding = g.length - real;
    for (std::size_t r = 0; r < padding; ++r) {
      window.row(static_cast<Eigen::Index>(r)) =
          real > 0 ? series.row(static_cast<Eigen::Index>(available - real)) : branches.raw.row(0);
    }
    for (std::size_t r = 0; r < real; ++r) {
      window.row(static_cast<Eigen::Index>(padding + r)) = series.row(static_cast<Eigen::Index>(available - real + r));
    }
    out[b] = std::move(window);
  }
  return out;
}

int sequence_label(const std::vector<int>& labels, std::size_t begin, std::size_t length) {
  std::size_t malicious = 0;
  for (std::size_t i = begin; i < begin + length; ++i) malicious += labels[i] == 1 ? 1 : 0;
  return 2 * malicious >= length ? 1 : 0;
}

SequenceBatch chunk_sequences(const std::vector<telemetry::Trace>& traces, std::size_t length) {
  if (length == 0) throw Error(ErrorCode::kInvalidArgument, "sequence length must be >= 1");
  SequenceBatch batch;
  batch.length = length;
  const auto len = static_cast<Eigen::Index>(length);
  for (std::size_t t = 0; t < traces.size(); ++t) {
    const auto& trace = traces[t];
    const std::size_t chunks = trace.rows() / length;
    for (std::size_t k = 0; k < chunks; ++k) {
      const std::size_t begin = k * length;
      batch.sequences.push_back(trace.features.middleRows(static_cast<Eigen::Index>(begin), len));
      batch.labels.push_back(sequence_label(trace.labels, begin, length));
      batch.source.push_back(t);
      batch.start.push_back(begin);
    }
  }
  return batch;
}

// ---------------------------------------------------------------- WindowStream

WindowStream::WindowStream(const BranchSizes& sizes, std::size_t width) : sizes_(sizes), width_(width) {
  state_.sum_short = RowVector::Zero(static_cast<Eigen::Index>(width));
  state_.sum_long = RowVector::Zero(static_cast<Eigen::Index>(width));
}

std::size_t WindowStream::total(Branch b) const {
  const std::size_t n = state_.rows;
  const auto g = branch_geometry(sizes_, b);
  if (g.factor == 1 || n == 0) return n;
  return (n - 1) / g.factor + 1;  // decimated rows pushed so far, including a pending one
}

void WindowStream::push(const RowVector& row) {
  if (static_cast<std::size_t>(row.size()) != width_) {
    throw Error(ErrorCode::kShapeMismatch, "stream row has " + std::to_string(row.size()) + " features, expected " +
                                               std::to_string(width_));
  }
  auto& h = state_.history;
  auto& raw = h[static_cast<std::size_t>(Branch::kRaw)];
  const std::size_t i = state_.rows;
  if (i == 0) state_.first = row;
  raw.push_back(row);
  // Same arithmetic, in the same order, as rolling_mean.
  const auto smooth = [&](RowVector& sum, std::size_t w, Branch b) {
    sum += row;
    if (i >= w) sum -= raw[raw.size() - 1 - w];
    h[static_cast<std::size_t>(b)].push_back(sum / static_cast<double>(std::min(i + 1, w)));
  };
  smooth(state_.sum_short, sizes_.smooth_short, Branch::kSmoothShort);
  smooth(state_.sum_long, sizes_.smooth_long, Branch::kSmoothLong);
  if (i % sizes_.down_mid == 0) h[static_cast<std::size_t>(Branch::kDownMid)].push_back(row);
  if (i % sizes_.down_long == 0) h[static_cast<std::size_t>(Branch::kDownLong)].push_back(row);
  ++state_.rows;

  const std::size_t keep_raw = std::max({sizes_.raw_window, sizes_.smooth_short + 1, sizes_.smooth_long + 1});
  while (raw.size() > keep_raw) raw.pop_front();
  for (Branch b : {Branch::kSmoothShort, Branch::kSmoothLong}) {
    auto& d = h[static_cast<std::size_t>(b)];
    while (d.size() > sizes_.raw_window) d.pop_front();
  }
  for (Branch b : {Branch::kDownMid, Branch::kDownLong}) {
    auto& d = h[static_cast<std::size_t>(b)];
    while (d.size() > sizes_.down_window + 1) d.pop_front();
  }
}

RowWindows WindowStream::windows() const {
  if (state_.rows == 0) throw Error(ErrorCode::kIndexOutOfRange, "no rows pushed yet");
  const std::size_t row = state_.rows - 1;
  RowWindows out;
  for (std::size_t b = 0; b < kBranchCount; ++b) {
    const auto which = static_cast<Branch>(b);
    const WindowGeometry g = branch_geometry(sizes_, which);
    const auto& d = state_.history[b];
    const std::size_t offset = total(which) - d.size();  // series index of d.front()
    const std::size_t available = g.factor == 1 ? row + 1 : (row + 1) / g.factor;
    const std::size_t real = std::min(available, g.length);
    const std::size_t padding = g.length - real;
    const auto at = [&](std::size_t j) -> const RowVector& { return d[j - offset]; };
    Matrix window(static_cast<Eigen::Index>(g.length), static_cast<Eigen::Index>(width_));
    for (std::size_t r = 0; r < padding; ++r)
      window.row(static_cast<Eigen::Index>(r)) = real > 0 ? at(available - real) : state_.first;
    for (std::size_t r = 0; r < real; ++r) window.row(static_cast<Eigen::Index>(padding + r)) = at(available - real + r);
    out[b] = std::move(window);
  }
  return out;
}

void WindowStream::restore(State state) {
  if (state.rows > 0 && static_cast<std::size_t>(state.first.size()) != width_)
    throw Error(ErrorCode::kShapeMismatch, "stream state width differs from the model");
  state_ = std::move(state);
  if (state_.sum_short.size() == 0) state_.sum_short = RowVector::Zero(static_cast<Eigen::Index>(width_));
  if (state_.sum_long.size() == 0) state_.sum_long = RowVector::Zero(static_cast<Eigen::Index>(width_));
}

}  // namespace sidewatch::features
