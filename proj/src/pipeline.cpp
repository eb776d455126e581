// SPDX-License-Identifier: Apache-2.0
#include "sidewatch/pipeline.hpp"

#include "sidewatch/error.hpp"
#include "sidewatch/synthgen.hpp"

#include <json.hpp>

#include <sstream>

namespace sidewatch::pipeline {

using models::Family;
using models::ModelArtifact;
using nlohmann::json;
using telemetry::Split;
using telemetry::Trace;

namespace {

std::vector<Trace> load_tagged(const std::filesystem::path& manifest, Split split) {
  const auto m = telemetry::read_manifest(manifest);
  return telemetry::load_split(m, split);
}

std::shared_ptr<const ModelArtifact> load_encoder(const config::RunConfig& cfg) {
  if (cfg.encoder.empty()) return nullptr;
  auto enc = std::make_shared<const ModelArtifact>(models::load_model(cfg.encoder));
  if (enc->family != Family::kAutoencoder)
    throw Error(ErrorCode::kBadConfig, "model.encoder '" + cfg.encoder + "' is not an autoencoder artifact");
  return enc;
}

eval::ModelSpec spec_for(const config::RunConfig& cfg, Family family) {
  eval::ModelSpec s = cfg.model;
  s.family = family;
  s.train = cfg.train_for(family);
  return s;
}

std::string grouped(std::size_t n) {
  std::string digits = std::to_string(n);
  std::string out;
  for (std::size_t i = 0; i < digits.size(); ++i) {
    if (i > 0 && (digits.size() - i) % 3 == 0) out += ',';
    out += digits[i];
  }
  return out;
}

std::size_t formula_count(const ModelArtifact& m) {
  switch (m.family) {
    case Family::kMlp: return models::mlp_parameter_formula(m.input_dim, m.mlp.hidden);
    case Family::kConvMultibranch: return models::conv_parameter_formula(m.input_dim, m.conv);
    case Family::kAutoencoder: return models::autoencoder_parameter_formula(m.input_dim, m.autoencoder.dim);
    default: return models::rnn_parameter_formula(m.input_dim, m.family, m.rnn.layers);
  }
}

struct WindowInfo {
  std::string branch;
  std::size_t factor;   // samples per branch row (rolling span for smoothed branches)
  std::size_t length;  // window length in branch rows
};

std::vector<WindowInfo> conv_windows(const ModelArtifact& m) {
  const auto& s = std::get<models::ConvNet>(m.net).sizes;
  return {{"raw", 1, s.raw_window},
          {"smooth_short", s.smooth_short, s.raw_window},
          {"smooth_long", s.smooth_long, s.raw_window},
          {"down_mid", s.down_mid, s.down_window},
          {"down_long", s.down_long, s.down_window}};
}

}  // namespace

telemetry::Manifest generate(const config::RunConfig& cfg, const std::filesystem::path& dir) {
  return synth::generate_corpus(cfg.corpus, dir);
}

namespace {

// Rewrites entry paths so they resolve relative to the directory holding `out`.
void rebase(telemetry::Manifest& m, const std::filesystem::path& out) {
  std::error_code ec;
  const auto out_dir = std::filesystem::absolute(out).parent_path();
  std::filesystem::create_directories(out_dir, ec);
  const auto base = std::filesystem::absolute(m.base_dir.empty() ? "." : m.base_dir);
  if (!std::filesystem::equivalent(out_dir, base, ec)) {
    for (auto& e : m.entries) e.path = std::filesystem::relative(base / e.path, out_dir).generic_string();
    for (auto& s : m.skipped) s.path = std::filesystem::relative(base / s.path, out_dir).generic_string();
    m.base_dir = out_dir;
  }
}

}  // namespace

telemetry::Manifest index(const std::filesystem::path& dir, const std::filesystem::path& out) {
  auto m = telemetry::build_manifest(dir);
  rebase(m, out);
  telemetry::write_manifest(out, m);
  return m;
}

telemetry::Manifest split(const config::RunConfig& cfg, const std::filesystem::path& manifest,
                          const std::filesystem::path& out) {
  const auto source = std::filesystem::is_directory(manifest) ? telemetry::build_manifest(manifest)
                                                              : telemetry::read_manifest(manifest);
  auto tagged = eval::stratified_split(source, cfg.split, cfg.seed);
  rebase(tagged, out);
  telemetry::write_manifest(out, tagged);
  return tagged;
}

models::TrainResult train(const config::RunConfig& cfg, const std::filesystem::path& manifest,
                          const std::filesystem::path& artifact) {
  const auto traces = load_tagged(manifest, Split::kTrain);
  if (traces.empty()) throw Error(ErrorCode::kNoData, "manifest " + manifest.string() + " has no train-tagged files");
  auto result = eval::fit_model(spec_for(cfg, cfg.model.family), traces, cfg.seed, load_encoder(cfg));
  models::save_model(artifact, result.model);
  return result;
}

eval::EvalReport evaluate(const config::RunConfig& cfg, const std::filesystem::path& manifest,
                          const std::vector<std::filesystem::path>& artifacts, const std::filesystem::path& out_dir) {
  const auto test = load_tagged(manifest, Split::kTest);
  if (test.empty()) throw Error(ErrorCode::kEmptyPopulation, "manifest " + manifest.string() + " has no test-tagged files");
  if (artifacts.empty()) throw Error(ErrorCode::kInvalidArgument, "no model artifacts to evaluate");
  eval::EvalReport report;
  report.config_json = config::render_config(cfg);
  report.seed = cfg.seed;
  for (const auto& path : artifacts) {
    const auto model = models::load_model(path);
    report.models.push_back(eval::evaluate_model(model, test, cfg.detector, path.stem().string()));
  }
  eval::emit_report(report, out_dir);
  return report;
}

SweepKind parse_sweep_kind(std::string_view name) {
  if (name == "threshold") return SweepKind::kThreshold;
  if (name == "encoding") return SweepKind::kEncoding;
  if (name == "seqlen") return SweepKind::kSequenceLength;
  throw Error(ErrorCode::kInvalidArgument, "unknown sweep '" + std::string(name) + "' (threshold | encoding | seqlen)");
}

eval::EvalReport sweep(const config::RunConfig& cfg, SweepKind kind, const std::filesystem::path& manifest,
                       const std::filesystem::path& artifact, const std::filesystem::path& out_dir) {
  eval::EvalReport report;
  report.config_json = config::render_config(cfg);
  report.seed = cfg.seed;
  const auto test = load_tagged(manifest, Split::kTest);
  if (test.empty()) throw Error(ErrorCode::kEmptyPopulation, "manifest " + manifest.string() + " has no test-tagged files");
  switch (kind) {
    case SweepKind::kThreshold: {
      if (artifact.empty()) throw Error(ErrorCode::kInvalidArgument, "the threshold sweep needs a model artifact");
      const auto model = models::load_model(artifact);
      report.models.push_back(eval::evaluate_model(model, test, cfg.detector, artifact.stem().string()));
      report.threshold = eval::sweep_threshold(model, test, cfg.detector, cfg.sweep.thresholds());
      break;
    }
    case SweepKind::kEncoding: {
      const auto train = load_tagged(manifest, Split::kTrain);
      std::vector<eval::ModelSpec> downstream;
      for (Family f : cfg.sweep.encoding_families) downstream.push_back(spec_for(cfg, f));
      report.encoding = eval::sweep_encoding_dims(cfg.sweep.encoding_dims, downstream,
                                                  spec_for(cfg, Family::kAutoencoder), train, test, cfg.detector,
                                                  cfg.seed);
      break;
    }
    case SweepKind::kSequenceLength: {
      const auto train = load_tagged(manifest, Split::kTrain);
      std::vector<eval::ModelSpec> variants;
      for (Family f : cfg.sweep.rnn_variants) variants.push_back(spec_for(cfg, f));
      report.sequence_length =
          eval::sweep_sequence_length(cfg.sweep.sequence_lengths, variants, train, test, cfg.detector, cfg.seed);
      break;
    }
  }
  eval::emit_report(report, out_dir);
  return report;
}

std::string inspect_text(const ModelArtifact& m) {
  std::ostringstream out;
  out << "model       " << models::model_id(m) << "\n";
  out << "family      " << models::family_name(m.family) << "\n";
  out << "input       " << m.raw_input_dim() << " features";
  if (m.encoder) out << " (encoded to " << m.input_dim << ")";
  out << "\n";
  out << "parameters  " << grouped(m.parameter_count()) << " (closed form " << grouped(formula_count(m)) << ")\n";
  if (m.encoder) out << "encoder     " << grouped(m.encoder->parameter_count()) << " parameters\n";
  out << "seed        " << m.seed << "\n";
  out << "epochs      " << m.epochs_trained << "\n";
  out << "period      " << telemetry::format_double(m.sample_period_s) << " s\n";
  if (m.family == Family::kConvMultibranch) {
    out << "windows\n";
    for (const auto& w : conv_windows(m))
      out << "  " << w.branch << std::string(14 - w.branch.size(), ' ') << "span " << w.factor << ", window "
          << w.length << "\n";
  }
  if (models::is_rnn_family(m.family)) out << "sequence    " << m.rnn.sequence_length << " rows\n";
  out << "layers\n";
  for (const auto& l : m.layer_specs()) {
    out << "  " << nn::layer_kind_name(l.kind) << " in=" << l.input << " units=" << l.units;
    if (l.kernel) out << " kernel=" << l.kernel;
    if (l.kind == nn::LayerKind::kDropout) out << " rate=" << telemetry::format_double(l.rate);
    out << " params=" << grouped(l.parameters) << "\n";
  }
  return out.str();
}

std::string inspect_json(const ModelArtifact& m) {
  json j;
  j["model_id"] = models::model_id(m);
  j["family"] = models::family_name(m.family);
  j["input_dim"] = m.raw_input_dim();
  j["network_input_dim"] = m.input_dim;
  j["parameters"] = m.parameter_count();
  j["parameter_formula"] = formula_count(m);
  j["encoder_parameters"] = m.encoder ? json(m.encoder->parameter_count()) : json(nullptr);
  j["seed"] = m.seed;
  j["epochs_trained"] = m.epochs_trained;
  j["sample_period_s"] = m.sample_period_s;
  if (m.family == Family::kConvMultibranch) {
    json w = json::array();
    for (const auto& info : conv_windows(m))
      w.push_back({{"branch", info.branch}, {"span", info.factor}, {"window", info.length}});
    j["windows"] = w;
  }
  if (models::is_rnn_family(m.family)) j["sequence_length"] = m.rnn.sequence_length;
  json layers = json::array();
  for (const auto& l : m.layer_specs())
    layers.push_back({{"kind", nn::layer_kind_name(l.kind)},
                      {"input", l.input},
                      {"units", l.units},
                      {"kernel", l.kernel},
                      {"parameters", l.parameters}});
  j["layers"] = layers;
  return j.dump(2) + "\n";
}

}  // namespace sidewatch::pipeline
