// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "sidewatch/common.hpp"
#include "sidewatch/featurize.hpp"
#include "sidewatch/nn.hpp"
#include "sidewatch/optim.hpp"
#include "sidewatch/telemetry.hpp"

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

namespace sidewatch::models {

enum class Family { kMlp, kConvMultibranch, kAutoencoder, kRnnVanilla, kRnnLstm, kRnnLstmBi, kRnnGru, kRnnGruBi };

inline constexpr Family kAllFamilies[] = {Family::kMlp,     Family::kConvMultibranch, Family::kAutoencoder,
                                          Family::kRnnVanilla, Family::kRnnLstm,  Family::kRnnLstmBi,
                                          Family::kRnnGru,  Family::kRnnGruBi};
inline constexpr Family kRnnFamilies[] = {Family::kRnnVanilla, Family::kRnnLstm, Family::kRnnLstmBi, Family::kRnnGru,
                                          Family::kRnnGruBi};

std::string_view family_name(Family f);
Family parse_family(std::string_view name);
/// Families that emit one probability per trace row.
bool is_row_family(Family f);
bool is_rnn_family(Family f);
nn::CellKind rnn_cell(Family f);
bool rnn_bidirectional(Family f);

struct MlpSettings {
  std::vector<std::size_t> hidden{100};
};

struct ConvSettings {
  std::size_t filters = 64;
  std::size_t kernel = 32;
  std::size_t dense_units = 64;
  double dropout = 0.3;
  nn::Regularizer head_reg{1e-4, 1e-4, 1e-4};
  features::BranchConfig branches;
};

struct RnnSettings {
  std::vector<std::size_t> layers{16, 32, 32, 16};
  std::size_t sequence_length = 960;
};

struct AutoencoderSettings {
  std::size_t dim = 20;
};

struct MlpNet {
  std::vector<nn::Dense> layers;  // tanh hidden layers, then one sigmoid unit
};

struct ConvNet {
  std::array<nn::Conv1d, features::kBranchCount> branches;
  nn::GlobalMaxPool1d pool;
  nn::Dense hidden;
  nn::Dropout dropout;
  nn::Dense output;
  features::BranchSizes sizes;
};

struct AutoencoderNet {
  nn::Dense encoder;  // tanh
  nn::Dense decoder;  // linear
};

using RecurrentBlock = std::variant<nn::Recurrent, nn::Bidirectional>;

struct RnnNet {
  std::vector<RecurrentBlock> layers;
  nn::Dense head;
};

/// A network plus everything needed to reproduce its predictions: architecture
/// settings, input normalization, an optional embedded encoder, and training provenance.
struct ModelArtifact {
  Family family = Family::kMlp;
  std::size_t input_dim = 0;  // width of the rows the network consumes (after any encoder)
  double sample_period_s = 0.5;
  MlpSettings mlp;
  ConvSettings conv;
  RnnSettings rnn;
  AutoencoderSettings autoencoder;
  features::NormStats norm;
  std::uint64_t seed = 0;
  std::size_t epochs_trained = 0;
  std::shared_ptr<const ModelArtifact> encoder;
  std::variant<MlpNet, ConvNet, AutoencoderNet, RnnNet> net;

  /// Feature width expected in raw trace rows.
  std::size_t raw_input_dim() const { return encoder ? encoder->raw_input_dim() : input_dim; }
  std::size_t parameter_count() const;  // trainable parameters of this network only
  std::vector<nn::LayerSpec> layer_specs() const;
  std::vector<std::pair<std::string, nn::Param*>> named_params();
  std::vector<std::pair<std::string, const nn::Param*>> named_params() const;
  std::vector<nn::Param*> params();
};

ModelArtifact build_mlp(std::size_t input_dim, const MlpSettings& settings = {}, std::uint64_t seed = 0);
ModelArtifact build_conv_multibranch(std::size_t input_dim, const ConvSettings& settings = {},
                                     double sample_period_s = 0.5, std::uint64_t seed = 0);
ModelArtifact build_autoencoder(std::size_t input_dim, std::size_t dim, std::uint64_t seed = 0);
ModelArtifact build_rnn(std::size_t input_dim, Family family, const RnnSettings& settings = {}, std::uint64_t seed = 0);

/// Closed-form parameter counts, independent of any built network.
std::size_t mlp_parameter_formula(std::size_t input_dim, const std::vector<std::size_t>& hidden);
std::size_t conv_parameter_formula(std::size_t input_dim, const ConvSettings& settings);
std::size_t autoencoder_parameter_formula(std::size_t input_dim, std::size_t dim);
std::size_t rnn_parameter_formula(std::size_t input_dim, Family family, const std::vector<std::size_t>& layers);

/// Normalizes rows with the model's statistics, after running them through the
/// embedded encoder when there is one.
Matrix prepare_rows(const ModelArtifact& model, const Matrix& raw_rows);
/// Copies of the traces with rows prepared for the model (labels and times kept).
std::vector<telemetry::Trace> prepare_traces(const ModelArtifact& model, const std::vector<telemetry::Trace>& traces);

struct TrainConfig {
  nn::OptimizerSpec optimizer;
  std::size_t max_epochs = 100;
  /// Rows (mlp, autoencoder), sequences (rnn) or contiguous rows of one trace (conv) per step.
  std::size_t batch_size = 32;
  std::size_t early_stop_patience = 20;
  double min_delta = 1e-4;
  double validation_fraction = 0.0;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Per-family defaults: adam for mlp/conv/autoencoder, rmsprop for the recurrent
/// families; 1000 iterations for mlp and 100 epochs for rnn.
TrainConfig default_train_config(Family family);

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;  // NaN when no validation split
  double learning_rate = 0.0;
};

struct TrainLog {
  std::vector<EpochRecord> epochs;
  bool early_stopped = false;
  std::string render() const;  // tab-separated: epoch, train_loss, val_loss, learning_rate
};

struct TrainResult {
  ModelArtifact model;
  TrainLog log;
};

/// Fits normalization on the given (training) traces and trains the network. Traces
/// are put in a canonical order first, so results depend on the seed, not on the order
/// the caller passes them in.
TrainResult train_model(ModelArtifact model, const std::vector<telemetry::Trace>& traces, const TrainConfig& config);

/// Per-row probabilities (mlp, conv). Row i only depends on rows <= i.
std::vector<double> predict_rows(const ModelArtifact& model, const telemetry::Trace& trace);
/// Same, for rows already passed through prepare_rows.
std::vector<double> predict_prepared_rows(const ModelArtifact& model, const Matrix& prepared);
/// Probabilities for sequences already in the model's input space (see prepare_traces).
std::vector<double> predict_sequences(const ModelArtifact& model, const features::SequenceBatch& batch);
double predict_sequence(const ModelArtifact& model, const Matrix& prepared_sequence);

/// Conv forward on one explicit set of windows (prepared rows), infer mode.
double conv_predict_windows(const ModelArtifact& model, const features::RowWindows& windows);

/// Autoencoder: normalized rows -> tanh bottleneck codes.
Matrix encode_rows(const ModelArtifact& encoder, const Matrix& raw_rows);
Matrix reconstruct_rows(const ModelArtifact& encoder, const Matrix& raw_rows);
std::vector<telemetry::Trace> encode_dataset(const ModelArtifact& encoder, const std::vector<telemetry::Trace>& traces);
/// Mean squared reconstruction error of normalized rows.
double reconstruction_mse(const ModelArtifact& encoder, const std::vector<telemetry::Trace>& traces);

/// Gradient checks (central differences) of each family's full training objective.
double grad_check_mlp(ModelArtifact& model, const Matrix& rows, const std::vector<int>& labels, double h = 1e-5);
/// Dropout masks are drawn from a fixed seed so the objective is deterministic.
double grad_check_conv(ModelArtifact& model, const features::RowWindows& windows, int label, double h = 1e-5);
double grad_check_autoencoder(ModelArtifact& model, const Matrix& rows, double h = 1e-5);
double grad_check_rnn(ModelArtifact& model, const Matrix& sequence, int label, double h = 1e-5);

/// Training accuracy helpers: fraction of rows (row families) or sequences (rnn)
/// classified correctly at the 0.5 cutoff.
double row_accuracy(const ModelArtifact& model, const std::vector<telemetry::Trace>& traces, double cutoff = 0.5);
double sequence_accuracy(const ModelArtifact& model, const std::vector<telemetry::Trace>& traces, double cutoff = 0.5);

// Artifact container.
inline constexpr std::uint32_t kArtifactVersion = 1;
std::string serialize_model(const ModelArtifact& model);
ModelArtifact deserialize_model(std::string_view bytes);
void save_model(const std::filesystem::path& path, const ModelArtifact& model);
ModelArtifact load_model(const std::filesystem::path& path);
/// Hex FNV-1a digest of the serialized artifact; used as a model id.
std::string model_id(const ModelArtifact& model);

}  // namespace sidewatch::models
