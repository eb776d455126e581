// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "sidewatch/detector.hpp"
#include "sidewatch/models.hpp"
#include "sidewatch/telemetry.hpp"

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace sidewatch::eval {

/// Requested split sizes per label. Unset test counts take every file left after training.
struct SplitCounts {
  std::size_t train_benign = 16;
  std::size_t train_malicious = 16;
  std::optional<std::size_t> test_benign = 11;
  std::optional<std::size_t> test_malicious = 13;
};

/// Tags manifest entries train/test. Within each label the quota is spread over categories
/// (one file per category first while the quota allows), then over onsets inside each
/// category, by largest remainder with seeded tie-breaks; members are drawn at random.
/// Throws InsufficientStratum when a label has too few files.
telemetry::Manifest stratified_split(telemetry::Manifest manifest, const SplitCounts& counts, std::uint64_t seed);

enum class Granularity { kRow, kSequence, kFile };
std::string_view granularity_name(Granularity g);

struct ConfusionCounts {
  Granularity granularity = Granularity::kFile;
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;

  std::size_t total() const { return tp + fp + tn + fn; }
  void add(bool predicted, bool actual);
  bool operator==(const ConfusionCounts&) const = default;
};

struct Metrics {
  double accuracy = 0.0;
  double fpr = 0.0;  // fp / (fp + tn), 0 when there are no negatives
  double fnr = 0.0;  // fn / (fn + tp), 0 when there are no positives
};

/// Throws EmptyPopulation for an all-zero count.
Metrics compute_metrics(const ConfusionCounts& counts);

struct FileResult {
  std::string name;  // canonical trace filename
  std::string category;
  bool malicious = false;          // ground truth
  bool flagged = false;            // detector verdict
  bool excluded = false;           // recurrent model and the trace is shorter than one sequence
  bool alert_before_onset = false;
  std::size_t rows = 0;
  std::optional<std::size_t> alert_row;
  std::optional<double> time_to_detect_s;
};

struct ModelReport {
  std::string name;  // display name in the summary table
  models::Family family = models::Family::kMlp;
  std::string model_id;
  std::size_t parameters = 0;
  std::optional<ConfusionCounts> rows;       // row families only
  std::optional<ConfusionCounts> sequences;  // recurrent families only
  ConfusionCounts files;
  std::vector<FileResult> file_results;

  /// Row-level rates for mlp/conv, file-level for the recurrent families.
  Granularity rate_granularity() const;
  Metrics rates() const;
  std::optional<double> row_accuracy() const;
  double file_accuracy() const;
  /// Mean time-to-detect over detected malicious files.
  std::optional<double> mean_ttd() const;
};

/// Evaluates a trained classifier on test traces in the given order.
ModelReport evaluate_model(const models::ModelArtifact& model, const std::vector<telemetry::Trace>& traces,
                           const detect::DetectorConfig& cfg, std::string name = {});

struct CurvePoint {
  double x = 0.0;
  double y = 0.0;
};

/// Plot-ready curve, written as `<name>.dat` with one "x y" line per point.
struct Curve {
  std::string name;
  std::string x_label;
  std::string y_label;
  std::vector<CurvePoint> points;
};

struct ThresholdSweep {
  Curve curve;  // (threshold, file accuracy)
  std::vector<std::size_t> thresholds;
  std::vector<std::vector<std::size_t>> flagged;  // indices of flagged traces per threshold
};

/// File accuracy per consecutive-row threshold from a single prediction pass.
ThresholdSweep sweep_threshold(const models::ModelArtifact& model, const std::vector<telemetry::Trace>& traces,
                               const detect::DetectorConfig& cfg, const std::vector<std::size_t>& thresholds);

/// Everything needed to build and train one model.
struct ModelSpec {
  models::Family family = models::Family::kConvMultibranch;
  models::MlpSettings mlp;
  models::ConvSettings conv;
  models::RnnSettings rnn;
  models::AutoencoderSettings autoencoder;
  models::TrainConfig train;
};

ModelSpec default_model_spec(models::Family family);

/// Builds the model for `input_dim` raw features (the encoder's bottleneck is used when an
/// encoder is given) and trains it on the traces with `seed` for both init and training.
models::TrainResult fit_model(const ModelSpec& spec, const std::vector<telemetry::Trace>& train, std::uint64_t seed,
                              std::shared_ptr<const models::ModelArtifact> encoder = nullptr);

inline const std::vector<std::size_t> kDefaultEncodingDims{5, 10, 15, 20, 30, 40, 50};
inline const std::vector<std::size_t> kDefaultSequenceLengths{5, 20, 40, 80, 160, 320, 640, 960};

struct SweepPointSeed {
  std::size_t point = 0;
  std::uint64_t seed = 0;
};

struct EncodingSweep {
  std::vector<std::size_t> dims;
  std::vector<double> reconstruction_mse;  // test rows, per dim
  std::vector<Curve> curves;               // one per downstream family: (dim, file accuracy)
  std::vector<std::uint64_t> seeds;        // per dim: base seed + index
};

/// For every bottleneck d: trains an autoencoder on the training rows, then trains and
/// evaluates each downstream model on the encoded rows.
EncodingSweep sweep_encoding_dims(const std::vector<std::size_t>& dims, const std::vector<ModelSpec>& downstream,
                                  const ModelSpec& autoencoder, const std::vector<telemetry::Trace>& train,
                                  const std::vector<telemetry::Trace>& test, const detect::DetectorConfig& cfg,
                                  std::uint64_t seed);

struct SequenceLengthRow {
  std::size_t length = 0;
  std::size_t train_sequences = 0;
  std::size_t test_sequences = 0;
  std::uint64_t seed = 0;
  std::vector<double> sequence_accuracy;  // per variant, on test sequences
  std::vector<double> file_accuracy;      // per variant, on test files holding a full sequence
};

struct SequenceLengthSweep {
  std::vector<models::Family> variants;
  std::vector<SequenceLengthRow> rows;
  std::vector<Curve> curves;  // one per variant: (length, sequence accuracy)
};

/// Trains every recurrent variant for each sequence length. Files shorter than L contribute
/// no sequences; throws NoSequences when no training file holds a full sequence.
SequenceLengthSweep sweep_sequence_length(const std::vector<std::size_t>& lengths,
                                          const std::vector<ModelSpec>& variants,
                                          const std::vector<telemetry::Trace>& train,
                                          const std::vector<telemetry::Trace>& test,
                                          const detect::DetectorConfig& cfg, std::uint64_t seed);

struct EvalReport {
  std::string config_json;  // effective configuration, echoed verbatim
  std::uint64_t seed = 0;
  std::vector<ModelReport> models;
  std::optional<ThresholdSweep> threshold;
  std::optional<EncodingSweep> encoding;
  std::optional<SequenceLengthSweep> sequence_length;
};

inline constexpr int kReportVersion = 1;

std::string render_report_json(const EvalReport& report);
/// Aligned text table with one row per model: row accuracy, file accuracy, FPR, FNR.
std::string render_summary(const EvalReport& report);
std::string render_curve(const Curve& curve);
/// Writes report.json, summary.txt and one .dat file per curve. Throws IoFailure.
std::vector<std::filesystem::path> emit_report(const EvalReport& report, const std::filesystem::path& dir);

}  // namespace sidewatch::eval
