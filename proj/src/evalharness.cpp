// SPDX-License-Identifier: Apache-2.0
#include "sidewatch/evalharness.hpp"

#include "sidewatch/error.hpp"
#include "sidewatch/featurize.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>

namespace sidewatch::eval {

using models::Family;
using models::ModelArtifact;
using nlohmann::json;
using telemetry::Trace;

namespace {

constexpr std::uint64_t kSplitStream = 0x5b1175;

// Largest-remainder apportionment of n over groups with the given capacities. With
// `one_each`, every non-empty group first gets one unit when n allows it. Ties between
// equal remainders are broken by a random key per group.
std::vector<std::size_t> apportion(const std::vector<std::size_t>& capacity, std::size_t n, Rng& rng, bool one_each) {
  std::vector<std::size_t> out(capacity.size(), 0);
  const std::size_t nonempty =
      static_cast<std::size_t>(std::count_if(capacity.begin(), capacity.end(), [](std::size_t c) { return c > 0; }));
  if (one_each && nonempty > 0 && n >= nonempty) {
    for (std::size_t i = 0; i < capacity.size(); ++i)
      if (capacity[i] > 0) out[i] = 1;
    n -= nonempty;
  }
  std::vector<std::size_t> cap(capacity.size());
  for (std::size_t i = 0; i < cap.size(); ++i) cap[i] = capacity[i] - out[i];
  const std::size_t total = std::accumulate(cap.begin(), cap.end(), std::size_t{0});
  if (n == 0 || total == 0) return out;
  std::vector<std::size_t> remainder(cap.size());
  std::vector<std::uint64_t> key(cap.size());
  std::size_t given = 0;
  for (std::size_t i = 0; i < cap.size(); ++i) {
    out[i] += n * cap[i] / total;
    given += n * cap[i] / total;
    remainder[i] = n * cap[i] % total;
    key[i] = rng();
  }
  std::vector<std::size_t> order(cap.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (remainder[a] != remainder[b]) return remainder[a] > remainder[b];
    return key[a] < key[b];
  });
  for (std::size_t k = 0; given < n && k < order.size(); ++k)
    if (remainder[order[k]] > 0) ++out[order[k]], ++given;
  return out;
}

// Picks `n` members of one label, spread over categories and then onsets.
std::vector<std::size_t> pick_stratified(const telemetry::Manifest& m, const std::vector<std::size_t>& pool,
                                         std::size_t n, Rng& rng) {
  std::map<std::string, std::map<double, std::vector<std::size_t>>> strata;
  for (std::size_t idx : pool) {
    const auto& meta = m.entries[idx].meta;
    strata[meta.category][meta.onset_s.value_or(-1.0)].push_back(idx);
  }
  std::vector<std::size_t> cat_sizes;
  for (const auto& [cat, onsets] : strata) {
    std::size_t s = 0;
    for (const auto& [o, members] : onsets) s += members.size();
    cat_sizes.push_back(s);
  }
  const auto per_cat = apportion(cat_sizes, n, rng, true);
  std::vector<std::size_t> picked;
  std::size_t ci = 0;
  for (auto& [cat, onsets] : strata) {
    std::vector<std::size_t> sizes;
    for (const auto& [o, members] : onsets) sizes.push_back(members.size());
    const auto per_onset = apportion(sizes, per_cat[ci++], rng, true);
    std::size_t oi = 0;
    for (auto& [o, members] : onsets) {
      std::shuffle(members.begin(), members.end(), rng);
      picked.insert(picked.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(per_onset[oi++]));
    }
  }
  return picked;
}

std::string trace_name(const Trace& t) {
  try {
    return telemetry::render_filename(t.meta);
  } catch (const Error&) {
    return t.meta.subject_name;
  }
}

std::string percent(double v) {
  if (std::isnan(v)) return "n/a";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f%%", 100.0 * v);
  return buf;
}

json counts_json(const ConfusionCounts& c) {
  return json{{"granularity", granularity_name(c.granularity)}, {"tp", c.tp}, {"fp", c.fp}, {"tn", c.tn}, {"fn", c.fn}};
}

template <typename T>
json opt_json(const std::optional<T>& v) {
  return v ? json(*v) : json(nullptr);
}

json curve_json(const Curve& c) {
  json pts = json::array();
  for (const auto& p : c.points) pts.push_back({p.x, p.y});
  return json{{"name", c.name}, {"x", c.x_label}, {"y", c.y_label}, {"points", pts}};
}

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIoFailure, "cannot write " + path.string());
  out << text;
  if (!out) throw Error(ErrorCode::kIoFailure, "write failed for " + path.string());
}

std::size_t full_sequences(const std::vector<Trace>& traces, std::size_t length) {
  std::size_t n = 0;
  for (const auto& t : traces) n += t.rows() / length;
  return n;
}

}  // namespace

telemetry::Manifest stratified_split(telemetry::Manifest manifest, const SplitCounts& counts, std::uint64_t seed) {
  for (auto& e : manifest.entries) e.split = telemetry::Split::kUnassigned;
  // Members are visited in path order so the result does not depend on entry order.
  std::vector<std::size_t> order(manifest.entries.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return manifest.entries[a].path < manifest.entries[b].path; });
  Rng rng(derive_seed(seed, kSplitStream));

  for (const bool malicious : {false, true}) {
    std::vector<std::size_t> pool;
    for (std::size_t idx : order)
      if (manifest.entries[idx].meta.is_malware() == malicious) pool.push_back(idx);
    const char* label = malicious ? "malicious" : "benign";
    const std::size_t train_n = malicious ? counts.train_malicious : counts.train_benign;
    const auto test_req = malicious ? counts.test_malicious : counts.test_benign;
    if (train_n > pool.size())
      throw Error(ErrorCode::kInsufficientStratum, std::string("requested ") + std::to_string(train_n) + " " + label +
                                                       " training files but only " + std::to_string(pool.size()) +
                                                       " exist");
    const std::size_t test_n = test_req.value_or(pool.size() - train_n);
    if (train_n + test_n > pool.size())
      throw Error(ErrorCode::kInsufficientStratum, std::string("requested ") + std::to_string(train_n) + " train + " +
                                                       std::to_string(test_n) + " test " + label + " files but only " +
                                                       std::to_string(pool.size()) + " exist");
    const auto train = pick_stratified(manifest, pool, train_n, rng);
    for (std::size_t idx : train) manifest.entries[idx].split = telemetry::Split::kTrain;
    std::vector<std::size_t> rest;
    for (std::size_t idx : pool)
      if (manifest.entries[idx].split == telemetry::Split::kUnassigned) rest.push_back(idx);
    for (std::size_t idx : pick_stratified(manifest, rest, test_n, rng))
      manifest.entries[idx].split = telemetry::Split::kTest;
  }
  return manifest;
}

std::string_view granularity_name(Granularity g) {
  switch (g) {
    case Granularity::kRow: return "row";
    case Granularity::kSequence: return "sequence";
    case Granularity::kFile: return "file";
  }
  return "?";
}

void ConfusionCounts::add(bool predicted, bool actual) {
  if (predicted)
    ++(actual ? tp : fp);
  else
    ++(actual ? fn : tn);
}

Metrics compute_metrics(const ConfusionCounts& c) {
  if (c.total() == 0)
    throw Error(ErrorCode::kEmptyPopulation,
                "no " + std::string(granularity_name(c.granularity)) + "s to compute metrics over");
  Metrics m;
  m.accuracy = static_cast<double>(c.tp + c.tn) / static_cast<double>(c.total());
  m.fpr = c.fp + c.tn ? static_cast<double>(c.fp) / static_cast<double>(c.fp + c.tn) : 0.0;
  m.fnr = c.fn + c.tp ? static_cast<double>(c.fn) / static_cast<double>(c.fn + c.tp) : 0.0;
  return m;
}

Granularity ModelReport::rate_granularity() const { return rows ? Granularity::kRow : Granularity::kFile; }

Metrics ModelReport::rates() const { return compute_metrics(rows ? *rows : files); }

std::optional<double> ModelReport::row_accuracy() const {
  if (!rows) return std::nullopt;
  return compute_metrics(*rows).accuracy;
}

double ModelReport::file_accuracy() const { return compute_metrics(files).accuracy; }

std::optional<double> ModelReport::mean_ttd() const {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& f : file_results)
    if (f.malicious && f.flagged && f.time_to_detect_s) sum += *f.time_to_detect_s, ++n;
  if (n == 0) return std::nullopt;
  return sum / static_cast<double>(n);
}

ModelReport evaluate_model(const ModelArtifact& model, const std::vector<Trace>& traces,
                           const detect::DetectorConfig& cfg, std::string name) {
  cfg.validate();
  ModelReport r;
  r.family = model.family;
  r.name = name.empty() ? std::string(models::family_name(model.family)) : std::move(name);
  r.model_id = models::model_id(model);
  r.parameters = model.parameter_count();
  const bool row_model = models::is_row_family(model.family);
  const bool rnn = models::is_rnn_family(model.family);
  if (!row_model && !rnn) throw Error(ErrorCode::kInvalidArgument, "autoencoders are not classifiers");
  if (row_model) r.rows = ConfusionCounts{Granularity::kRow};
  if (rnn) r.sequences = ConfusionCounts{Granularity::kSequence};
  const std::size_t l = model.rnn.sequence_length;

  for (const auto& t : traces) {
    FileResult f;
    f.name = trace_name(t);
    f.category = t.meta.category;
    f.malicious = t.meta.is_malware();
    f.rows = t.rows();
    if (rnn && t.rows() < l) {
      f.excluded = true;
      r.file_results.push_back(std::move(f));
      continue;
    }
    const auto det = detect::detect_trace(model, t, cfg);
    if (row_model)
      for (std::size_t i = 0; i < det.probabilities.size(); ++i)
        r.rows->add(det.probabilities[i] > cfg.prob_cutoff, t.labels[i] == 1);
    if (rnn)
      for (std::size_t k = 0; k < det.probabilities.size(); ++k)
        r.sequences->add(det.probabilities[k] > cfg.prob_cutoff, features::sequence_label(t.labels, k * l, l) == 1);
    f.flagged = det.verdict.malicious;
    f.alert_row = det.verdict.alert_row;
    f.time_to_detect_s = det.verdict.time_to_detect_s;
    f.alert_before_onset = det.alert_before_onset;
    r.files.add(f.flagged, f.malicious);
    r.file_results.push_back(std::move(f));
  }
  return r;
}

ThresholdSweep sweep_threshold(const ModelArtifact& model, const std::vector<Trace>& traces,
                               const detect::DetectorConfig& cfg, const std::vector<std::size_t>& thresholds) {
  cfg.validate();
  const bool rnn = models::is_rnn_family(model.family);
  const std::size_t l = model.rnn.sequence_length;
  std::vector<std::optional<std::vector<double>>> probs;
  for (const auto& t : traces) {
    if (rnn && t.rows() < l)
      probs.emplace_back();
    else
      probs.emplace_back(detect::detect_trace(model, t, cfg).probabilities);
  }
  ThresholdSweep out;
  out.curve = {"threshold", "consecutive_rows", "file_accuracy", {}};
  out.thresholds = thresholds;
  for (std::size_t th : thresholds) {
    detect::DetectorConfig c = cfg;
    c.consec_threshold = th;
    c.validate();
    std::vector<std::size_t> flagged;
    std::size_t hits = 0, total = 0;
    for (std::size_t i = 0; i < traces.size(); ++i) {
      if (!probs[i]) continue;
      const auto v = rnn ? detect::classify_sequences(*probs[i], l, c) : detect::classify_file(*probs[i], c);
      if (v.malicious) flagged.push_back(i);
      hits += v.malicious == traces[i].meta.is_malware();
      ++total;
    }
    if (total == 0) throw Error(ErrorCode::kEmptyPopulation, "no traces to sweep over");
    out.curve.points.push_back({static_cast<double>(th), static_cast<double>(hits) / static_cast<double>(total)});
    out.flagged.push_back(std::move(flagged));
  }
  return out;
}

ModelSpec default_model_spec(Family family) {
  ModelSpec s;
  s.family = family;
  s.train = models::default_train_config(family);
  return s;
}

models::TrainResult fit_model(const ModelSpec& spec, const std::vector<Trace>& train, std::uint64_t seed,
                              std::shared_ptr<const ModelArtifact> encoder) {
  if (train.empty()) throw Error(ErrorCode::kNoData, "no training traces");
  const auto raw = static_cast<std::size_t>(train.front().features.cols());
  const std::size_t input = encoder ? encoder->autoencoder.dim : raw;
  if (encoder && encoder->input_dim != raw)
    throw Error(ErrorCode::kShapeMismatch, "encoder expects " + std::to_string(encoder->input_dim) +
                                               " features, traces have " + std::to_string(raw));
  ModelArtifact m;
  switch (spec.family) {
    case Family::kMlp: m = models::build_mlp(input, spec.mlp, seed); break;
    case Family::kConvMultibranch:
      m = models::build_conv_multibranch(input, spec.conv, train.front().meta.sample_period_s, seed);
      break;
    case Family::kAutoencoder:
      if (encoder) throw Error(ErrorCode::kInvalidArgument, "autoencoders do not take an encoder");
      m = models::build_autoencoder(input, spec.autoencoder.dim, seed);
      break;
    default: m = models::build_rnn(input, spec.family, spec.rnn, seed); break;
  }
  m.encoder = std::move(encoder);
  models::TrainConfig tc = spec.train;
  tc.seed = seed;
  return models::train_model(std::move(m), train, tc);
}

EncodingSweep sweep_encoding_dims(const std::vector<std::size_t>& dims, const std::vector<ModelSpec>& downstream,
                                  const ModelSpec& autoencoder, const std::vector<Trace>& train,
                                  const std::vector<Trace>& test, const detect::DetectorConfig& cfg,
                                  std::uint64_t seed) {
  EncodingSweep out;
  out.dims = dims;
  for (const auto& d : downstream)
    out.curves.push_back({"encoding_" + std::string(models::family_name(d.family)), "encoding_dim", "file_accuracy", {}});
  for (std::size_t i = 0; i < dims.size(); ++i) {
    const std::uint64_t s = seed + i;
    out.seeds.push_back(s);
    ModelSpec ae = autoencoder;
    ae.family = Family::kAutoencoder;
    ae.autoencoder.dim = dims[i];
    auto encoder = std::make_shared<const ModelArtifact>(fit_model(ae, train, s).model);
    out.reconstruction_mse.push_back(models::reconstruction_mse(*encoder, test));
    for (std::size_t j = 0; j < downstream.size(); ++j) {
      const auto fitted = fit_model(downstream[j], train, s, encoder);
      const auto report = evaluate_model(fitted.model, test, cfg);
      out.curves[j].points.push_back({static_cast<double>(dims[i]), report.file_accuracy()});
    }
  }
  return out;
}

SequenceLengthSweep sweep_sequence_length(const std::vector<std::size_t>& lengths,
                                          const std::vector<ModelSpec>& variants, const std::vector<Trace>& train,
                                          const std::vector<Trace>& test, const detect::DetectorConfig& cfg,
                                          std::uint64_t seed) {
  SequenceLengthSweep out;
  for (const auto& v : variants) {
    if (!models::is_rnn_family(v.family))
      throw Error(ErrorCode::kInvalidArgument,
                  "sequence-length sweep needs recurrent variants, got " + std::string(models::family_name(v.family)));
    out.variants.push_back(v.family);
    out.curves.push_back({"seqlen_" + std::string(models::family_name(v.family)), "sequence_length",
                          "sequence_accuracy", {}});
  }
  for (std::size_t i = 0; i < lengths.size(); ++i) {
    const std::size_t l = lengths[i];
    if (l == 0) throw Error(ErrorCode::kInvalidArgument, "sequence length must be >= 1");
    SequenceLengthRow row;
    row.length = l;
    row.seed = seed + i;
    row.train_sequences = full_sequences(train, l);
    row.test_sequences = full_sequences(test, l);
    if (row.train_sequences == 0)
      throw Error(ErrorCode::kNoSequences, "no training file holds " + std::to_string(l) + " rows");
    for (std::size_t j = 0; j < variants.size(); ++j) {
      ModelSpec spec = variants[j];
      spec.rnn.sequence_length = l;
      const auto fitted = fit_model(spec, train, row.seed);
      const auto report = evaluate_model(fitted.model, test, cfg);
      const double nan = std::numeric_limits<double>::quiet_NaN();
      row.sequence_accuracy.push_back(report.sequences->total() ? compute_metrics(*report.sequences).accuracy : nan);
      row.file_accuracy.push_back(report.files.total() ? report.file_accuracy() : nan);
      out.curves[j].points.push_back({static_cast<double>(l), row.sequence_accuracy.back()});
    }
    out.rows.push_back(std::move(row));
  }
  return out;
}

std::string render_report_json(const EvalReport& report) {
  json j;
  j["format"] = "sidewatch-report";
  j["version"] = kReportVersion;
  j["seed"] = report.seed;
  j["config"] = report.config_json.empty() ? json(nullptr) : json::parse(report.config_json);
  json models_j = json::array();
  for (const auto& m : report.models) {
    json mj;
    mj["name"] = m.name;
    mj["family"] = models::family_name(m.family);
    mj["model_id"] = m.model_id;
    mj["parameters"] = m.parameters;
    mj["rate_granularity"] = granularity_name(m.rate_granularity());
    const bool any_files = m.files.total() > 0;
    mj["row_accuracy"] = opt_json(m.row_accuracy());
    mj["file_accuracy"] = any_files ? json(m.file_accuracy()) : json(nullptr);
    const bool any_rates = m.rows ? m.rows->total() > 0 : any_files;
    mj["fpr"] = any_rates ? json(m.rates().fpr) : json(nullptr);
    mj["fnr"] = any_rates ? json(m.rates().fnr) : json(nullptr);
    mj["mean_ttd_s"] = opt_json(m.mean_ttd());
    json conf;
    if (m.rows) conf["row"] = counts_json(*m.rows);
    if (m.sequences) conf["sequence"] = counts_json(*m.sequences);
    conf["file"] = counts_json(m.files);
    mj["confusion"] = conf;
    json files = json::array();
    for (const auto& f : m.file_results)
      files.push_back({{"name", f.name},
                       {"category", f.category},
                       {"malicious", f.malicious},
                       {"flagged", f.flagged},
                       {"excluded", f.excluded},
                       {"alert_before_onset", f.alert_before_onset},
                       {"rows", f.rows},
                       {"alert_row", opt_json(f.alert_row)},
                       {"time_to_detect_s", opt_json(f.time_to_detect_s)}});
    mj["files"] = files;
    models_j.push_back(mj);
  }
  j["models"] = models_j;
  json sweeps = json::object();
  if (report.threshold) {
    sweeps["threshold"] = {{"curve", curve_json(report.threshold->curve)},
                           {"thresholds", report.threshold->thresholds},
                           {"flagged", report.threshold->flagged}};
  }
  if (report.encoding) {
    json curves = json::array();
    for (const auto& c : report.encoding->curves) curves.push_back(curve_json(c));
    sweeps["encoding"] = {{"dims", report.encoding->dims},
                          {"seeds", report.encoding->seeds},
                          {"reconstruction_mse", report.encoding->reconstruction_mse},
                          {"curves", curves}};
  }
  if (report.sequence_length) {
    json rows = json::array();
    for (const auto& r : report.sequence_length->rows)
      rows.push_back({{"length", r.length},
                      {"train_sequences", r.train_sequences},
                      {"test_sequences", r.test_sequences},
                      {"seed", r.seed},
                      {"sequence_accuracy", r.sequence_accuracy},
                      {"file_accuracy", r.file_accuracy}});
    json variants = json::array();
    for (auto f : report.sequence_length->variants) variants.push_back(models::family_name(f));
    sweeps["sequence_length"] = {{"variants", variants}, {"rows", rows}};
  }
  j["sweeps"] = sweeps;
  return j.dump(2) + "\n";
}

std::string render_summary(const EvalReport& report) {
  std::ostringstream out;
  char line[256];
  std::snprintf(line, sizeof(line), "%-24s %14s %14s %10s %10s %6s %12s\n", "Model", "Row Accuracy", "File Accuracy",
                "FPR", "FNR", "Rates", "Mean TTD");
  out << line;
  for (const auto& m : report.models) {
    const double nan = std::numeric_limits<double>::quiet_NaN();
    const auto row = m.row_accuracy();
    const bool any_files = m.files.total() > 0;
    const bool any_rates = m.rows ? m.rows->total() > 0 : any_files;
    const Metrics rates = any_rates ? m.rates() : Metrics{nan, nan, nan};
    const auto ttd = m.mean_ttd();
    char ttd_s[32] = "n/a";
    if (ttd) std::snprintf(ttd_s, sizeof(ttd_s), "%.2f s", *ttd);
    std::snprintf(line, sizeof(line), "%-24s %14s %14s %10s %10s %6s %12s\n", m.name.c_str(),
                  percent(row.value_or(nan)).c_str(), percent(any_files ? m.file_accuracy() : nan).c_str(),
                  percent(rates.fpr).c_str(), percent(rates.fnr).c_str(),
                  std::string(granularity_name(m.rate_granularity())).c_str(), ttd_s);
    out << line;
  }
  if (report.sequence_length) {
    const auto& s = *report.sequence_length;
    out << "\n";
    std::snprintf(line, sizeof(line), "%-16s %19s", "Sequence Length", "Training Sequences");
    out << line;
    for (auto f : s.variants) {
      std::snprintf(line, sizeof(line), " %14s", std::string(models::family_name(f)).c_str());
      out << line;
    }
    out << "\n";
    for (const auto& r : s.rows) {
      std::snprintf(line, sizeof(line), "%-16zu %19zu", r.length, r.train_sequences);
      out << line;
      for (double a : r.sequence_accuracy) {
        std::snprintf(line, sizeof(line), " %14s", percent(a).c_str());
        out << line;
      }
      out << "\n";
    }
  }
  if (report.encoding) {
    const auto& e = *report.encoding;
    out << "\n";
    std::snprintf(line, sizeof(line), "%-16s", "Encoding Dim");
    out << line;
    for (const auto& c : e.curves) {
      std::snprintf(line, sizeof(line), " %22s", c.name.c_str());
      out << line;
    }
    out << "\n";
    for (std::size_t i = 0; i < e.dims.size(); ++i) {
      std::snprintf(line, sizeof(line), "%-16zu", e.dims[i]);
      out << line;
      for (const auto& c : e.curves) {
        std::snprintf(line, sizeof(line), " %22s", percent(c.points[i].y).c_str());
        out << line;
      }
      out << "\n";
    }
  }
  return out.str();
}

std::string render_curve(const Curve& curve) {
  std::string out;
  for (const auto& p : curve.points)
    out += telemetry::format_double(p.x) + " " + (std::isnan(p.y) ? "nan" : telemetry::format_double(p.y)) + "\n";
  return out;
}

std::vector<std::filesystem::path> emit_report(const EvalReport& report, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::kIoFailure, "cannot create " + dir.string() + ": " + ec.message());
  std::vector<std::filesystem::path> written;
  auto put = [&](const std::string& name, const std::string& text) {
    write_file(dir / name, text);
    written.push_back(dir / name);
  };
  put("report.json", render_report_json(report));
  put("summary.txt", render_summary(report));
  if (report.threshold) put(report.threshold->curve.name + ".dat", render_curve(report.threshold->curve));
  if (report.encoding)
    for (const auto& c : report.encoding->curves) put(c.name + ".dat", render_curve(c));
  if (report.sequence_length)
    for (const auto& c : report.sequence_length->curves) put(c.name + ".dat", render_curve(c));
  return written;
}

}  // namespace sidewatch::eval
