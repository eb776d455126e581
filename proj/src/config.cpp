// SPDX-License-Identifier: Apache-2.0
#include "sidewatch/config.hpp"

#include "sidewatch/error.hpp"

#include <json.hpp>

#include <chrono>
#include <ctime>
#include <fstream>
#include <sstream>

namespace sidewatch::config {

using models::Family;
using nlohmann::json;

namespace {

struct Entry {
  std::string key;
  json value;
  std::string help;
};

json default_counts() {
  json j = json::object();
  for (const auto& c : synth::default_corpus_spec().counts) j[c.category] = c.count;
  return j;
}

std::vector<std::string> family_names(const std::vector<Family>& fs) {
  std::vector<std::string> out;
  for (auto f : fs) out.emplace_back(models::family_name(f));
  return out;
}

const std::vector<Entry>& entries() {
  static const std::vector<Entry> table = [] {
    const SweepConfig sweep;
    const models::ConvSettings conv;
    const models::TrainConfig train;
    const detect::DetectorConfig det;
    const eval::SplitCounts split;
    const synth::CorpusSpec corpus = synth::default_corpus_spec();
    return std::vector<Entry>{
        {"seed", 1, "master seed: corpus generation, split assignment, initialization and shuffling"},
        {"output_dir", "", "run directory; empty selects runs/<UTC timestamp>_seed<seed>"},
        {"manifest", "", "manifest.json describing the corpus (train, eval, sweep, split)"},
        {"corpus.features", corpus.features, "sensor channels per generated row"},
        {"corpus.duration_s", corpus.duration_s, "length of each generated trace in seconds"},
        {"corpus.sample_period_s", corpus.sample_period_s, "seconds between generated rows"},
        {"corpus.onsets", corpus.onsets, "malware start times to draw from, in seconds"},
        {"corpus.difficulty", corpus.difficulty, "scale of malware effects (1 = 3 sigma shift on the core channels)"},
        {"corpus.counts", default_counts(), "files per category; the object replaces the default as a whole"},
        {"model.family", "conv_multibranch",
         "mlp | conv_multibranch | autoencoder | rnn_vanilla | rnn_lstm | rnn_lstm_bi | rnn_gru | rnn_gru_bi"},
        {"model.mlp.hidden", std::vector<std::size_t>{100}, "tanh hidden layer widths"},
        {"model.conv.filters", conv.filters, "filters per branch"},
        {"model.conv.kernel", conv.kernel, "kernel length"},
        {"model.conv.dense_units", conv.dense_units, "width of the dense layer after pooling"},
        {"model.conv.dropout", conv.dropout, "dropout rate after the dense layer"},
        {"model.conv.l1", conv.head_reg.l1, "L1 weight penalty on the dense layers"},
        {"model.conv.l2", conv.head_reg.l2, "L2 weight penalty on the dense layers"},
        {"model.conv.activity_l2", conv.head_reg.activity_l2, "L2 activity penalty on the dense layer output"},
        {"model.conv.smooth_short_s", conv.branches.smooth_short_s, "short rolling-mean span in seconds"},
        {"model.conv.smooth_long_s", conv.branches.smooth_long_s, "long rolling-mean span in seconds"},
        {"model.conv.down_mid_s", conv.branches.down_mid_s, "mid downsampling block in seconds"},
        {"model.conv.down_long_s", conv.branches.down_long_s, "long downsampling block in seconds"},
        {"model.conv.raw_window", conv.branches.raw_window, "window length of the full-rate branches"},
        {"model.conv.down_window", conv.branches.down_window, "window length of the downsampled branches"},
        {"model.rnn.layers", std::vector<std::size_t>{16, 32, 32, 16}, "recurrent layer widths"},
        {"model.rnn.sequence_length", 960, "rows per sequence"},
        {"model.autoencoder.dim", 20, "bottleneck width"},
        {"model.encoder", "", "trained autoencoder artifact whose codes feed the model"},
        {"train.optimizer", nullptr, "adam | rmsprop; null: rmsprop for rnn families, adam otherwise"},
        {"train.learning_rate", train.optimizer.learning_rate, "initial learning rate"},
        {"train.beta1", train.optimizer.beta1, "adam first-moment decay"},
        {"train.beta2", train.optimizer.beta2, "adam second-moment decay"},
        {"train.adam_epsilon", train.optimizer.adam_epsilon, "adam denominator epsilon"},
        {"train.rho", train.optimizer.rho, "rmsprop decay"},
        {"train.rmsprop_epsilon", train.optimizer.rmsprop_epsilon, "rmsprop denominator epsilon"},
        {"train.lr_factor", train.optimizer.lr_factor, "learning-rate multiplier on a plateau"},
        {"train.lr_patience", train.optimizer.lr_patience, "epochs without improvement before reducing the rate"},
        {"train.lr_floor", train.optimizer.lr_floor, "smallest learning rate"},
        {"train.max_epochs", nullptr,
         "epoch budget; null: mlp 1000, conv_multibranch 10, autoencoder 200, rnn 100"},
        {"train.batch_size", train.batch_size, "rows, sequences, or contiguous rows of one trace (conv) per step"},
        {"train.early_stop_patience", nullptr, "epochs without improvement before stopping; null: 3 for conv, else 20"},
        {"train.min_delta", train.min_delta, "smallest loss decrease counted as improvement"},
        {"train.validation_fraction", train.validation_fraction,
         "share of training examples held out to monitor; 0 monitors training loss"},
        {"detector.prob_cutoff", det.prob_cutoff, "row probability above which a row is malicious"},
        {"detector.consec_threshold", det.consec_threshold, "consecutive malicious rows that raise an alert"},
        {"detector.sample_period_s", det.sample_period_s, "seconds per row for time-to-detect"},
        {"detector.latching", det.latching, "stay alerted after the first alert"},
        {"detector.aggregation", "any", "rnn file verdict: any | majority of sequences"},
        {"split.train_benign", split.train_benign, "benign training files"},
        {"split.train_malicious", split.train_malicious, "malicious training files"},
        {"split.test_benign", *split.test_benign, "benign test files; null: all remaining"},
        {"split.test_malicious", *split.test_malicious, "malicious test files; null: all remaining"},
        {"sweep.threshold_min", sweep.threshold_min, "first consecutive-row threshold"},
        {"sweep.threshold_max", sweep.threshold_max, "last consecutive-row threshold"},
        {"sweep.encoding_dims", sweep.encoding_dims, "autoencoder bottlenecks"},
        {"sweep.encoding_families", family_names(sweep.encoding_families), "models trained on each encoding"},
        {"sweep.sequence_lengths", sweep.sequence_lengths, "rnn sequence lengths"},
        {"sweep.rnn_variants", family_names(sweep.rnn_variants), "rnn families in the sequence-length sweep"},
    };
  }();
  return table;
}

const Entry* find_entry(const std::string& key) {
  for (const auto& e : entries())
    if (e.key == key) return &e;
  return nullptr;
}

bool is_section(const std::string& key) {
  for (const auto& e : entries())
    if (e.key.size() > key.size() && e.key.compare(0, key.size(), key) == 0 && e.key[key.size()] == '.') return true;
  return false;
}

json::json_pointer pointer(const std::string& key) {
  std::string p = "/" + key;
  for (auto& ch : p)
    if (ch == '.') ch = '/';
  return json::json_pointer(p);
}

json defaults_document() {
  json doc = json::object();
  for (const auto& e : entries()) doc[pointer(e.key)] = e.value;
  return doc;
}

[[noreturn]] void bad(const std::string& msg) { throw Error(ErrorCode::kBadConfig, msg); }

void merge(json& doc, const json& layer, const std::string& prefix, const std::string& origin) {
  if (!layer.is_object()) bad(origin + ": expected an object" + (prefix.empty() ? "" : " at '" + prefix + "'"));
  for (const auto& [k, v] : layer.items()) {
    const std::string key = prefix.empty() ? k : prefix + "." + k;
    if (find_entry(key))
      doc[pointer(key)] = v;
    else if (is_section(key))
      merge(doc, v, key, origin);
    else
      bad(origin + ": unknown key '" + key + "'");
  }
}

class Reader {
 public:
  explicit Reader(const json& doc) : doc_(doc) {}

  const json& at(const std::string& key) const { return doc_.at(pointer(key)); }
  bool is_null(const std::string& key) const { return at(key).is_null(); }

  std::uint64_t u64(const std::string& key) const {
    const json& v = at(key);
    if (v.is_number_unsigned()) return v.get<std::uint64_t>();
    if (v.is_number_integer() && v.get<std::int64_t>() >= 0) return v.get<std::uint64_t>();
    if (v.is_number_float()) {
      const double d = v.get<double>();
      if (d >= 0 && d == static_cast<double>(static_cast<std::uint64_t>(d))) return static_cast<std::uint64_t>(d);
    }
    bad("'" + key + "' must be a non-negative integer, got " + v.dump());
  }
  std::size_t size(const std::string& key) const { return static_cast<std::size_t>(u64(key)); }
  double number(const std::string& key) const {
    const json& v = at(key);
    if (!v.is_number()) bad("'" + key + "' must be a number, got " + v.dump());
    return v.get<double>();
  }
  bool boolean(const std::string& key) const {
    const json& v = at(key);
    if (!v.is_boolean()) bad("'" + key + "' must be true or false, got " + v.dump());
    return v.get<bool>();
  }
  std::string string(const std::string& key) const {
    const json& v = at(key);
    if (!v.is_string()) bad("'" + key + "' must be a string, got " + v.dump());
    return v.get<std::string>();
  }
  template <typename F>
  auto list(const std::string& key, F&& element) const {
    const json& v = at(key);
    if (!v.is_array()) bad("'" + key + "' must be a list, got " + v.dump());
    std::vector<decltype(element(v))> out;
    for (const auto& item : v) out.push_back(element(item));
    return out;
  }
  std::vector<std::size_t> sizes(const std::string& key) const {
    return list(key, [&](const json& x) -> std::size_t {
      if (!x.is_number_integer() || x.get<std::int64_t>() < 0) bad("'" + key + "' must hold non-negative integers");
      return x.get<std::size_t>();
    });
  }
  std::vector<double> numbers(const std::string& key) const {
    return list(key, [&](const json& x) {
      if (!x.is_number()) bad("'" + key + "' must hold numbers");
      return x.get<double>();
    });
  }
  std::vector<Family> families(const std::string& key) const {
    return list(key, [&](const json& x) {
      if (!x.is_string()) bad("'" + key + "' must hold family names");
      return family(key, x.get<std::string>());
    });
  }
  static Family family(const std::string& key, const std::string& name) {
    try {
      return models::parse_family(name);
    } catch (const Error&) {
      bad("'" + key + "': unknown model family '" + name + "'");
    }
  }

 private:
  const json& doc_;
};

RunConfig resolve_document(const json& doc) {
  const Reader r(doc);
  RunConfig c;
  c.seed = r.u64("seed");
  c.output_dir = r.string("output_dir");
  c.manifest = r.string("manifest");

  auto& corpus = c.corpus;
  corpus.seed = c.seed;
  corpus.features = r.size("corpus.features");
  corpus.duration_s = r.number("corpus.duration_s");
  corpus.sample_period_s = r.number("corpus.sample_period_s");
  corpus.onsets = r.numbers("corpus.onsets");
  corpus.difficulty = r.number("corpus.difficulty");
  const json& counts = r.at("corpus.counts");
  if (!counts.is_object()) bad("'corpus.counts' must map categories to file counts");
  for (const auto& [cat, n] : counts.items()) {
    if (!telemetry::is_known_category(cat)) bad("'corpus.counts': unknown category '" + cat + "'");
    if (!n.is_number_integer() || n.get<std::int64_t>() < 0) bad("'corpus.counts." + cat + "' must be a count");
  }
  // Generation order fixes per-file seeds: default categories first, then any others.
  corpus.counts.clear();
  std::vector<std::string> order;
  for (const auto& d : synth::default_corpus_spec().counts) order.push_back(d.category);
  for (auto cat : telemetry::kBenignCategories)
    if (std::find(order.begin(), order.end(), cat) == order.end()) order.emplace_back(cat);
  for (const auto& cat : order)
    if (counts.contains(cat)) corpus.counts.push_back({cat, counts[cat].get<std::size_t>()});

  const Family family = Reader::family("model.family", r.string("model.family"));
  auto& m = c.model;
  m = eval::default_model_spec(family);
  m.mlp.hidden = r.sizes("model.mlp.hidden");
  m.conv.filters = r.size("model.conv.filters");
  m.conv.kernel = r.size("model.conv.kernel");
  m.conv.dense_units = r.size("model.conv.dense_units");
  m.conv.dropout = r.number("model.conv.dropout");
  m.conv.head_reg = {r.number("model.conv.l1"), r.number("model.conv.l2"), r.number("model.conv.activity_l2")};
  m.conv.branches.smooth_short_s = r.number("model.conv.smooth_short_s");
  m.conv.branches.smooth_long_s = r.number("model.conv.smooth_long_s");
  m.conv.branches.down_mid_s = r.number("model.conv.down_mid_s");
  m.conv.branches.down_long_s = r.number("model.conv.down_long_s");
  m.conv.branches.raw_window = r.size("model.conv.raw_window");
  m.conv.branches.down_window = r.size("model.conv.down_window");
  m.rnn.layers = r.sizes("model.rnn.layers");
  m.rnn.sequence_length = r.size("model.rnn.sequence_length");
  m.autoencoder.dim = r.size("model.autoencoder.dim");
  c.encoder = r.string("model.encoder");

  auto& t = m.train;
  if (!r.is_null("train.optimizer")) {
    try {
      c.optimizer_override = nn::parse_optimizer(r.string("train.optimizer"));
    } catch (const Error& e) {
      bad(std::string("'train.optimizer': ") + e.what());
    }
  }
  t.optimizer.learning_rate = r.number("train.learning_rate");
  t.optimizer.beta1 = r.number("train.beta1");
  t.optimizer.beta2 = r.number("train.beta2");
  t.optimizer.adam_epsilon = r.number("train.adam_epsilon");
  t.optimizer.rho = r.number("train.rho");
  t.optimizer.rmsprop_epsilon = r.number("train.rmsprop_epsilon");
  t.optimizer.lr_factor = r.number("train.lr_factor");
  t.optimizer.lr_patience = r.size("train.lr_patience");
  t.optimizer.lr_floor = r.number("train.lr_floor");
  if (!r.is_null("train.max_epochs")) c.max_epochs_override = r.size("train.max_epochs");
  t.batch_size = r.size("train.batch_size");
  if (!r.is_null("train.early_stop_patience")) c.patience_override = r.size("train.early_stop_patience");
  t.min_delta = r.number("train.min_delta");
  t.validation_fraction = r.number("train.validation_fraction");
  t.seed = c.seed;
  t = c.train_for(family);

  auto& d = c.detector;
  d.prob_cutoff = r.number("detector.prob_cutoff");
  d.consec_threshold = r.size("detector.consec_threshold");
  d.sample_period_s = r.number("detector.sample_period_s");
  d.latching = r.boolean("detector.latching");
  try {
    d.aggregation = detect::parse_aggregation(r.string("detector.aggregation"));
  } catch (const Error& e) {
    bad(std::string("'detector.aggregation': ") + e.what());
  }

  c.split.train_benign = r.size("split.train_benign");
  c.split.train_malicious = r.size("split.train_malicious");
  c.split.test_benign = r.is_null("split.test_benign") ? std::nullopt : std::optional(r.size("split.test_benign"));
  c.split.test_malicious =
      r.is_null("split.test_malicious") ? std::nullopt : std::optional(r.size("split.test_malicious"));

  auto& s = c.sweep;
  s.threshold_min = r.size("sweep.threshold_min");
  s.threshold_max = r.size("sweep.threshold_max");
  if (s.threshold_min < 1 || s.threshold_max < s.threshold_min)
    bad("sweep thresholds need 1 <= threshold_min <= threshold_max");
  s.encoding_dims = r.sizes("sweep.encoding_dims");
  s.encoding_families = r.families("sweep.encoding_families");
  s.sequence_lengths = r.sizes("sweep.sequence_lengths");
  s.rnn_variants = r.families("sweep.rnn_variants");

  try {
    t.validate();
    d.validate();
  } catch (const Error& e) {
    bad(e.what());
  }
  return c;
}

json parse_json(std::string_view text, const std::string& origin) {
  try {
    return json::parse(text, nullptr, true, /*ignore_comments=*/true);
  } catch (const json::parse_error& e) {
    bad(origin + ": " + e.what());
  }
}

}  // namespace

std::vector<std::size_t> SweepConfig::thresholds() const {
  std::vector<std::size_t> out;
  for (std::size_t t = threshold_min; t <= threshold_max; ++t) out.push_back(t);
  return out;
}

models::TrainConfig RunConfig::train_for(Family family) const {
  models::TrainConfig t = models::default_train_config(family);
  const auto kind = t.optimizer.kind;
  const auto max_epochs = t.max_epochs;
  const auto patience = t.early_stop_patience;
  t = model.train;
  t.optimizer.kind = optimizer_override.value_or(kind);
  t.max_epochs = max_epochs_override.value_or(max_epochs);
  t.early_stop_patience = patience_override.value_or(patience);
  t.seed = seed;
  return t;
}

const std::vector<KeyInfo>& keys() {
  static const std::vector<KeyInfo> out = [] {
    std::vector<KeyInfo> v;
    for (const auto& e : entries()) v.push_back({e.key, e.value.dump(), e.help});
    return v;
  }();
  return out;
}

ConfigBuilder::ConfigBuilder() : doc_(defaults_document().dump()) {}

void ConfigBuilder::apply_text(std::string_view json_text, const std::string& origin) {
  json doc = json::parse(doc_);
  merge(doc, parse_json(json_text, origin), "", origin);
  doc_ = doc.dump();
}

void ConfigBuilder::apply_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIoFailure, "cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  apply_text(ss.str(), path.string());
}

void ConfigBuilder::apply_override(std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos || eq == 0) bad("override '" + std::string(assignment) + "' is not key=value");
  const std::string key(assignment.substr(0, eq));
  const std::string value(assignment.substr(eq + 1));
  json parsed = json::parse(value, nullptr, false);
  set(key, parsed.is_discarded() ? json(value).dump() : parsed.dump());
}

void ConfigBuilder::set(std::string_view key, const std::string& json_value) {
  const std::string k(key);
  if (!find_entry(k)) bad("unknown key '" + k + "'");
  json doc = json::parse(doc_);
  doc[pointer(k)] = parse_json(json_value, k);
  doc_ = doc.dump();
}

RunConfig ConfigBuilder::resolve() const { return resolve_document(json::parse(doc_)); }

RunConfig default_run_config() { return ConfigBuilder().resolve(); }

std::string render_config(const RunConfig& c) {
  json doc = defaults_document();
  auto put = [&](const std::string& key, json v) { doc[pointer(key)] = std::move(v); };
  put("seed", c.seed);
  put("output_dir", c.output_dir);
  put("manifest", c.manifest);
  put("corpus.features", c.corpus.features);
  put("corpus.duration_s", c.corpus.duration_s);
  put("corpus.sample_period_s", c.corpus.sample_period_s);
  put("corpus.onsets", c.corpus.onsets);
  put("corpus.difficulty", c.corpus.difficulty);
  json counts = json::object();
  for (const auto& cc : c.corpus.counts) counts[cc.category] = cc.count;
  put("corpus.counts", counts);
  const auto& m = c.model;
  put("model.family", models::family_name(m.family));
  put("model.mlp.hidden", m.mlp.hidden);
  put("model.conv.filters", m.conv.filters);
  put("model.conv.kernel", m.conv.kernel);
  put("model.conv.dense_units", m.conv.dense_units);
  put("model.conv.dropout", m.conv.dropout);
  put("model.conv.l1", m.conv.head_reg.l1);
  put("model.conv.l2", m.conv.head_reg.l2);
  put("model.conv.activity_l2", m.conv.head_reg.activity_l2);
  put("model.conv.smooth_short_s", m.conv.branches.smooth_short_s);
  put("model.conv.smooth_long_s", m.conv.branches.smooth_long_s);
  put("model.conv.down_mid_s", m.conv.branches.down_mid_s);
  put("model.conv.down_long_s", m.conv.branches.down_long_s);
  put("model.conv.raw_window", m.conv.branches.raw_window);
  put("model.conv.down_window", m.conv.branches.down_window);
  put("model.rnn.layers", m.rnn.layers);
  put("model.rnn.sequence_length", m.rnn.sequence_length);
  put("model.autoencoder.dim", m.autoencoder.dim);
  put("model.encoder", c.encoder);
  const auto& t = m.train;
  put("train.optimizer", c.optimizer_override ? json(nn::optimizer_name(*c.optimizer_override)) : json(nullptr));
  put("train.learning_rate", t.optimizer.learning_rate);
  put("train.beta1", t.optimizer.beta1);
  put("train.beta2", t.optimizer.beta2);
  put("train.adam_epsilon", t.optimizer.adam_epsilon);
  put("train.rho", t.optimizer.rho);
  put("train.rmsprop_epsilon", t.optimizer.rmsprop_epsilon);
  put("train.lr_factor", t.optimizer.lr_factor);
  put("train.lr_patience", t.optimizer.lr_patience);
  put("train.lr_floor", t.optimizer.lr_floor);
  put("train.max_epochs", c.max_epochs_override ? json(*c.max_epochs_override) : json(nullptr));
  put("train.batch_size", t.batch_size);
  put("train.early_stop_patience", c.patience_override ? json(*c.patience_override) : json(nullptr));
  put("train.min_delta", t.min_delta);
  put("train.validation_fraction", t.validation_fraction);
  put("detector.prob_cutoff", c.detector.prob_cutoff);
  put("detector.consec_threshold", c.detector.consec_threshold);
  put("detector.sample_period_s", c.detector.sample_period_s);
  put("detector.latching", c.detector.latching);
  put("detector.aggregation", detect::aggregation_name(c.detector.aggregation));
  put("split.train_benign", c.split.train_benign);
  put("split.train_malicious", c.split.train_malicious);
  put("split.test_benign", c.split.test_benign ? json(*c.split.test_benign) : json(nullptr));
  put("split.test_malicious", c.split.test_malicious ? json(*c.split.test_malicious) : json(nullptr));
  put("sweep.threshold_min", c.sweep.threshold_min);
  put("sweep.threshold_max", c.sweep.threshold_max);
  put("sweep.encoding_dims", c.sweep.encoding_dims);
  put("sweep.encoding_families", family_names(c.sweep.encoding_families));
  put("sweep.sequence_lengths", c.sweep.sequence_lengths);
  put("sweep.rnn_variants", family_names(c.sweep.rnn_variants));
  return doc.dump(2) + "\n";
}

RunConfig parse_config(std::string_view json_text) {
  ConfigBuilder b;
  b.apply_text(json_text);
  return b.resolve();
}

std::filesystem::path default_run_dir(std::uint64_t seed, const std::filesystem::path& root) {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char stamp[32];
  std::strftime(stamp, sizeof(stamp), "%Y%m%dT%H%M%S", &tm);
  return root / (std::string(stamp) + "_seed" + std::to_string(seed));
}

}  // namespace sidewatch::config
