// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "sidewatch/featurize.hpp"
#include "sidewatch/models.hpp"
#include "sidewatch/telemetry.hpp"

#include <cstddef>
#include <deque>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace sidewatch::detect {

/// How sequence-level predictions become a file verdict for recurrent models.
enum class Aggregation { kAny, kMajority };
std::string_view aggregation_name(Aggregation a);
Aggregation parse_aggregation(std::string_view name);

struct DetectorConfig {
  double prob_cutoff = 0.5;
  std::size_t consec_threshold = 50;
  double sample_period_s = 0.5;
  bool latching = true;
  Aggregation aggregation = Aggregation::kAny;

  void validate() const;
};

struct DetectionVerdict {
  bool malicious = false;
  std::optional<std::size_t> alert_row;
  std::optional<double> time_to_detect_s;
};

/// Row i is malicious when prob_i > cutoff; the file is malicious once a run of
/// consec_threshold malicious rows exists. alert_row is the row completing the first run.
DetectionVerdict classify_file(const std::vector<double>& row_probs, const DetectorConfig& cfg);
/// Same rule on already thresholded row labels.
DetectionVerdict classify_labels(const std::vector<int>& row_labels, const DetectorConfig& cfg);

/// (alert_row - onset_row + 1) * period. Throws AlertBeforeOnset when the alert precedes
/// the onset and InvalidArgument for a benign verdict.
double time_to_detect(const DetectionVerdict& verdict, std::size_t onset_row, const DetectorConfig& cfg);

/// Recurrent verdict from per-sequence probabilities of consecutive chunks of length L.
/// `any`: malicious iff some sequence is; `majority`: iff at least half are. The alert
/// row is the last row of the first malicious sequence.
DetectionVerdict classify_sequences(const std::vector<double>& seq_probs, std::size_t sequence_length,
                                    const DetectorConfig& cfg);

struct TraceDetection {
  DetectionVerdict verdict;
  std::vector<double> probabilities;  // per row (mlp, conv) or per sequence (rnn)
  bool alert_before_onset = false;    // malicious verdict raised before the labeled onset
};

/// Runs the model over a whole trace and applies the decision rule. The verdict carries a
/// time-to-detect when the trace has an onset and the alert does not precede it.
TraceDetection detect_trace(const models::ModelArtifact& model, const telemetry::Trace& trace,
                            const DetectorConfig& cfg);

enum class StreamEvent { kNone, kAlert, kStillMalicious };
std::string_view event_name(StreamEvent e);

struct StreamState {
  std::size_t rows = 0;     // rows consumed
  std::size_t counter = 0;  // current run of malicious rows
  bool alerted = false;     // latched (or currently in an alerted run when not latching)
  std::optional<std::size_t> alert_row;  // first alert
  std::size_t alerts = 0;
  std::optional<double> last_time;
};

/// Consumes one row's probability. Emits kAlert exactly when the counter first reaches the
/// threshold; afterwards latching mode reports kStillMalicious for every row until
/// stream_reset, while non-latching mode re-arms once the run breaks.
/// Throws OutOfOrderRow when `time` does not increase.
StreamEvent stream_step(StreamState& state, double prob, const DetectorConfig& cfg,
                        std::optional<double> time = std::nullopt);
void stream_reset(StreamState& state);

/// Model-backed streaming detector: raw telemetry rows in, events out. Row models are
/// evaluated on causal windows of the rows seen so far; recurrent models buffer rows
/// into consecutive sequences and alert when a completed sequence is malicious.
class StreamDetector {
 public:
  StreamDetector(std::shared_ptr<const models::ModelArtifact> model, DetectorConfig cfg);

  StreamEvent push(double time, const RowVector& raw_row);
  /// Probability behind the last event (row probability, or last sequence probability).
  std::optional<double> last_probability() const { return last_prob_; }
  const StreamState& state() const { return state_; }
  const DetectorConfig& config() const { return cfg_; }
  const std::string& model_id() const { return model_id_; }
  void reset() { stream_reset(state_); }

  /// JSON snapshot of everything needed to continue the stream with the same model.
  std::string save_state() const;
  /// Throws InvalidArgument if the snapshot was taken with a different model.
  void restore_state(std::string_view snapshot);

 private:
  std::shared_ptr<const models::ModelArtifact> model_;
  DetectorConfig cfg_;
  std::string model_id_;
  StreamState state_;
  features::WindowStream windows_;
  std::vector<RowVector> pending_;  // rnn: rows of the sequence being filled
  std::optional<double> last_prob_;
};

/// One line-delimited JSON event record.
std::string render_event(double t, std::size_t row, std::string_view model_id, StreamEvent event);

}  // namespace sidewatch::detect
