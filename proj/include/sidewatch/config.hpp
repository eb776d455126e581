// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "sidewatch/detector.hpp"
#include "sidewatch/evalharness.hpp"
#include "sidewatch/synthgen.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace sidewatch::config {

struct SweepConfig {
  std::size_t threshold_min = 1;
  std::size_t threshold_max = 100;
  std::vector<std::size_t> encoding_dims = eval::kDefaultEncodingDims;
  std::vector<models::Family> encoding_families{models::Family::kMlp, models::Family::kConvMultibranch};
  std::vector<std::size_t> sequence_lengths = eval::kDefaultSequenceLengths;
  std::vector<models::Family> rnn_variants{std::begin(models::kRnnFamilies), std::end(models::kRnnFamilies)};

  std::vector<std::size_t> thresholds() const;
};

/// Fully resolved settings for one command.
struct RunConfig {
  std::uint64_t seed = 1;
  std::string output_dir;  // empty: runs/<timestamp>_seed<seed>
  std::string manifest;
  synth::CorpusSpec corpus = synth::default_corpus_spec();
  eval::ModelSpec model = eval::default_model_spec(models::Family::kConvMultibranch);
  std::string encoder;  // optional autoencoder artifact applied before the model
  detect::DetectorConfig detector;
  eval::SplitCounts split;
  SweepConfig sweep;
  // Family-dependent training keys that were set explicitly.
  std::optional<nn::OptimizerKind> optimizer_override;
  std::optional<std::size_t> max_epochs_override;
  std::optional<std::size_t> patience_override;

  /// Training settings for any family: its defaults, the shared training keys, and the
  /// explicitly set family-dependent keys. model.train equals train_for(model.family).
  models::TrainConfig train_for(models::Family family) const;
};

/// One documented configuration key.
struct KeyInfo {
  std::string key;  // dotted path, e.g. "train.max_epochs"
  std::string default_text;
  std::string help;
};

/// Every accepted key with its default, in documentation order.
const std::vector<KeyInfo>& keys();

/// Layers configuration sources: built-in defaults, then JSON documents (comments allowed),
/// then `key=value` overrides. Unknown keys and ill-typed values throw BadConfig.
class ConfigBuilder {
 public:
  ConfigBuilder();
  void apply_text(std::string_view json_text, const std::string& origin = "config");
  void apply_file(const std::filesystem::path& path);
  /// `dotted.key=value`; the value is read as JSON and falls back to a plain string.
  void apply_override(std::string_view assignment);
  void set(std::string_view key, const std::string& json_value);
  RunConfig resolve() const;

 private:
  std::string doc_;  // merged JSON document
};

RunConfig default_run_config();
/// Effective configuration as JSON. Family-dependent training keys stay null unless set.
std::string render_config(const RunConfig& cfg);
/// Parses a document produced by render_config (or any partial config).
RunConfig parse_config(std::string_view json_text);

/// runs/<UTC yyyymmddTHHMMSS>_seed<N> under `root`.
std::filesystem::path default_run_dir(std::uint64_t seed, const std::filesystem::path& root = "runs");

}  // namespace sidewatch::config
