// SPDX-License-Identifier: Apache-2.0
#include "sidewatch/synthgen.hpp"

#include "sidewatch/error.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace sidewatch::synth {

using telemetry::Trace;

namespace {

constexpr std::size_t kLatentFactors = 4;
constexpr double kNoisePhi = 0.7;
constexpr double kFactorPhi = 0.95;

enum : std::uint64_t { kNoiseStream = 1, kWorkloadStream, kEffectStream, kOnsetStream, kMetaStream };

struct GroupSpec {
  const char* name;  // '#' is replaced by the channel's index within its group
  double mean;
  double sigma;
  double load;
};

constexpr GroupSpec kGroups[kGroupCount] = {
    {"CPU Core ## Clock [MHz]", 2800.0, 40.0, 0.6}, {"CPU Core ## Usage [%]", 15.0, 5.0, 1.0},
    {"CPU Core ## Temp [C]", 45.0, 1.5, 0.8},       {"Memory Load ## [%]", 40.0, 2.0, 0.4},
    {"Disk ## Read Rate [MB/s]", 3.0, 1.0, 0.3},    {"Disk ## Write Rate [MB/s]", 2.0, 1.0, 0.3},
    {"Network ## Rx [KB/s]", 30.0, 10.0, 0.2},      {"Network ## Tx [KB/s]", 10.0, 4.0, 0.2},
    {"Fan ## Speed [RPM]", 1400.0, 50.0, 0.7},      {"GPU ## Load [%]", 5.0, 2.0, 0.5},
    {"Core ## Voltage [V]", 1.2, 0.01, 0.1},        {"Package ## Power [W]", 25.0, 3.0, 0.9},
};

struct KindSpec {
  const char* kind;
  std::vector<std::size_t> core_groups;
  std::vector<Effect> extras;  // channels hold group ids here; resolved per layout
};

const std::vector<KindSpec>& kind_specs() {
  static const std::vector<KindSpec> specs = {
      {"ransomware", {1, 5, 4, 2}, {{EffectShape::kIoBurstTrain, {5}, 4.0, 0, 0, 0}}},
      {"worm", {1, 7, 6, 11}, {{EffectShape::kPeriodicBurst, {7}, 3.0, 5.0, 2.0, 0}}},
      {"spyware", {3, 1, 9, 0}, {{EffectShape::kPeriodicBurst, {6}, 4.0, 10.0, 3.0, 0}}},
      {"trojan-backdoor", {1, 6, 3, 11}, {{EffectShape::kPeriodicBurst, {7}, 4.0, 15.0, 3.0, 0}}},
      {"virus", {1, 4, 5, 2}, {{EffectShape::kRamp, {2, 8}, 3.0, 0, 0, 60.0}}},
      {"rootkit", {3, 10, 1, 0}, {{EffectShape::kRamp, {3}, 2.0, 0, 0, 90.0}}},
  };
  return specs;
}

const KindSpec& kind_spec(std::string_view kind) {
  for (const auto& k : kind_specs())
    if (k.kind == kind) return k;
  throw Error(ErrorCode::kBadSpec, "unknown malware kind '" + std::string(kind) + "'");
}

std::string subject_prefix(std::string_view category) {
  static const std::pair<std::string_view, std::string_view> names[] = {
      {"benign", "routine"},       {"os-only", "idle"},          {"benchmark", "pcmark"},
      {"game", "solitaire"},       {"office", "wordpad"},        {"system-tool", "defrag"},
      {"complex-code", "compiler"}, {"ransomware", "cryptlock"}, {"worm", "networm"},
      {"spyware", "keyspy"},       {"trojan-backdoor", "backdoor"}, {"virus", "filevir"},
      {"rootkit", "stealthkit"}};
  for (const auto& [cat, name] : names)
    if (cat == category) return std::string(name);
  return "sample";
}

// Corpus-wide sensor coupling: every channel mixes its own AR(1) noise with a few
// shared slow factors, with unit total variance.
struct Mixing {
  Matrix loadings;  // F x K, unit-norm rows
  RowVector weight;  // F, share of the shared factors
};

Mixing make_mixing(const CorpusSpec& spec) {
  Rng rng(derive_seed(spec.seed, 0x313c, spec.features));
  std::normal_distribution<double> n(0.0, 1.0);
  std::uniform_real_distribution<double> u(0.3, 0.7);
  Mixing m;
  const auto f = static_cast<Eigen::Index>(spec.features);
  m.loadings.resize(f, static_cast<Eigen::Index>(kLatentFactors));
  m.weight.resize(f);
  for (Eigen::Index c = 0; c < f; ++c) {
    for (Eigen::Index k = 0; k < m.loadings.cols(); ++k) m.loadings(c, k) = n(rng);
    m.loadings.row(c).normalize();
    m.weight(c) = u(rng);
  }
  return m;
}

// Benign dynamics in sigma units (T x F), before baselines are applied.
Matrix benign_sigma_units(const WorkloadProfile& workload, const CorpusSpec& spec, std::uint64_t seed,
                          const std::vector<Channel>& layout) {
  const std::size_t t_rows = spec.rows();
  const auto f = static_cast<Eigen::Index>(spec.features);
  const Mixing mix = make_mixing(spec);
  Rng noise(derive_seed(seed, kNoiseStream));
  Rng wl(derive_seed(seed, kWorkloadStream));
  std::normal_distribution<double> n(0.0, 1.0);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double phase = 2.0 * std::numbers::pi * u(wl);
  const double period = workload.load_period_s * (0.8 + 0.4 * u(wl));

  RowVector e(f), factors(static_cast<Eigen::Index>(kLatentFactors));
  for (Eigen::Index c = 0; c < f; ++c) e(c) = n(noise);
  for (Eigen::Index k = 0; k < factors.size(); ++k) factors(k) = n(noise);
  const double es = std::sqrt(1.0 - kNoisePhi * kNoisePhi);
  const double fs = std::sqrt(1.0 - kFactorPhi * kFactorPhi);

  Matrix out(static_cast<Eigen::Index>(t_rows), f);
  for (std::size_t t = 0; t < t_rows; ++t) {
    if (t > 0) {
      for (Eigen::Index c = 0; c < f; ++c) e(c) = kNoisePhi * e(c) + es * n(noise);
      for (Eigen::Index k = 0; k < factors.size(); ++k) factors(k) = kFactorPhi * factors(k) + fs * n(noise);
    }
    const double time = static_cast<double>(t) * spec.sample_period_s;
    const double load = workload.load_amplitude * std::sin(2.0 * std::numbers::pi * time / period + phase) +
                        workload.drift * static_cast<double>(t) / static_cast<double>(t_rows);
    const auto ti = static_cast<Eigen::Index>(t);
    for (Eigen::Index c = 0; c < f; ++c) {
      const double w = mix.weight(c);
      const double shared = mix.loadings.row(c).dot(factors);
      out(ti, c) = std::sqrt(1.0 - w * w) * e(c) + w * shared + layout[static_cast<std::size_t>(c)].load_loading * load;
    }
  }
  return out;
}

Trace finish_trace(const Matrix& sigma_units, const std::vector<Channel>& layout, const CorpusSpec& spec,
                   telemetry::TraceMeta meta, std::vector<int> labels) {
  Trace t;
  t.meta = std::move(meta);
  t.meta.sample_period_s = spec.sample_period_s;
  for (const auto& ch : layout) t.header.push_back(ch.name);
  t.features.resize(sigma_units.rows(), sigma_units.cols());
  for (Eigen::Index r = 0; r < sigma_units.rows(); ++r) {
    t.times.push_back(static_cast<double>(r) * spec.sample_period_s);
    for (Eigen::Index c = 0; c < sigma_units.cols(); ++c) {
      const auto& ch = layout[static_cast<std::size_t>(c)];
      t.features(r, c) = std::round((ch.mean + ch.sigma * sigma_units(r, c)) * 1000.0) / 1000.0;
    }
  }
  t.labels = std::move(labels);
  return t;
}

telemetry::TraceMeta file_meta(std::uint64_t seed, const std::string& subject, const std::string& category) {
  Rng rng(derive_seed(seed, kMetaStream));
  std::uniform_int_distribution<int> os(0, 1), hw(1, 6);
  telemetry::TraceMeta meta;
  meta.subject_name = subject;
  meta.os = os(rng) ? "WinXPPro" : "Win7SP1";
  meta.hardware_id = "hw" + std::to_string(hw(rng));
  meta.category = category;
  return meta;
}

}  // namespace

std::vector<Channel> channel_layout(std::size_t features) {
  std::vector<Channel> out;
  out.reserve(features);
  for (std::size_t c = 0; c < features; ++c) {
    const auto& g = kGroups[c % kGroupCount];
    std::string name = g.name;
    name.replace(name.find("##"), 2, "#" + std::to_string(c / kGroupCount + 1));
    out.push_back({std::move(name), c % kGroupCount, g.mean, g.sigma, g.load});
  }
  return out;
}

WorkloadProfile workload_profile(std::string_view kind) {
  if (kind == "os-only") return {"os-only", 0.2, 60.0, 0.1};
  if (kind == "benchmark") return {"benchmark", 1.0, 30.0, 0.3};
  if (kind == "game") return {"game", 0.8, 20.0, 0.2};
  if (kind == "office") return {"office", 0.3, 90.0, 0.1};
  if (kind == "system-tool") return {"system-tool", 0.5, 45.0, 0.4};
  if (kind == "complex-code") return {"complex-code", 0.7, 40.0, 0.3};
  if (kind == "benign") return {"benign", 0.4, 60.0, 0.2};
  throw Error(ErrorCode::kBadSpec, "unknown workload kind '" + std::string(kind) + "'");
}

std::string_view effect_shape_name(EffectShape s) {
  switch (s) {
    case EffectShape::kSustainedShift: return "sustained-shift";
    case EffectShape::kRamp: return "ramp";
    case EffectShape::kPeriodicBurst: return "periodic-burst";
    case EffectShape::kIoBurstTrain: return "io-burst-train";
  }
  return "?";
}

MalwareProfile malware_profile(std::string_view kind, std::size_t features) {
  if (features == 0) throw Error(ErrorCode::kBadSpec, "feature count must be >= 1");
  const KindSpec& spec = kind_spec(kind);
  MalwareProfile p;
  p.kind = spec.kind;
  // Core channels: round-robin over the kind's groups, then any other channel, up to six.
  std::vector<std::size_t> core;
  const std::size_t want = std::min<std::size_t>(6, features);
  for (std::size_t idx = 0; core.size() < want && idx * kGroupCount < features; ++idx)
    for (std::size_t g : spec.core_groups) {
      const std::size_t c = g + idx * kGroupCount;
      if (c < features && core.size() < want) core.push_back(c);
    }
  for (std::size_t c = 0; core.size() < want; ++c)
    if (std::find(core.begin(), core.end(), c) == core.end()) core.push_back(c);
  p.effects.push_back({EffectShape::kSustainedShift, core, 3.0, 0, 0, 0});
  for (Effect e : spec.extras) {
    std::vector<std::size_t> channels;
    for (std::size_t g : e.channels) {
      for (std::size_t idx = 0; idx < 3; ++idx)
        if (g + idx * kGroupCount < features) channels.push_back(g + idx * kGroupCount);
      if (g >= features) channels.push_back(g % features);
    }
    e.channels = channels;
    p.effects.push_back(e);
  }
  return p;
}

void CorpusSpec::validate() const {
  if (features == 0) throw Error(ErrorCode::kBadSpec, "features must be >= 1");
  if (!(sample_period_s > 0.0)) throw Error(ErrorCode::kBadSpec, "sample_period_s must be positive");
  if (!(sample_period_s <= 2.5)) throw Error(ErrorCode::kBadSpec, "sample_period_s must be <= 2.5 (half the shortest beacon period)");
  if (!(duration_s >= sample_period_s)) throw Error(ErrorCode::kBadSpec, "duration_s must cover at least one sample");
  if (!(difficulty >= 0.0)) throw Error(ErrorCode::kBadSpec, "difficulty must be >= 0");
  bool any_malware = false;
  for (const auto& c : counts) {
    if (!telemetry::is_known_category(c.category))
      throw Error(ErrorCode::kBadSpec, "unknown category '" + c.category + "'");
    any_malware = any_malware || (c.count > 0 && telemetry::is_malware_category(c.category));
  }
  if (any_malware && onsets.empty()) throw Error(ErrorCode::kBadSpec, "malware requested but no onset choices");
  for (double o : onsets)
    if (!(o >= 0.0 && o < duration_s)) throw Error(ErrorCode::kBadSpec, "onset choices must lie in [0, duration_s)");
}

std::size_t CorpusSpec::rows() const {
  return static_cast<std::size_t>(std::llround(duration_s / sample_period_s));
}

CorpusSpec default_corpus_spec() {
  CorpusSpec s;
  s.counts = {{"os-only", 6},    {"benchmark", 12}, {"game", 2},   {"complex-code", 1},
              {"office", 4},     {"system-tool", 3}, {"ransomware", 11}, {"worm", 9},
              {"spyware", 1},    {"trojan-backdoor", 6}, {"virus", 1}, {"rootkit", 1}};
  return s;
}

Trace generate_benign_trace(const WorkloadProfile& workload, const CorpusSpec& spec, std::uint64_t seed,
                            const std::string& subject) {
  spec.validate();
  const auto layout = channel_layout(spec.features);
  const Matrix z = benign_sigma_units(workload, spec, seed, layout);
  const std::string category = workload.kind;
  return finish_trace(z, layout, spec, file_meta(seed, subject, category),
                      std::vector<int>(static_cast<std::size_t>(z.rows()), 0));
}

Trace generate_malicious_trace(const WorkloadProfile& workload, const MalwareProfile& malware, const CorpusSpec& spec,
                               std::uint64_t seed, const std::string& subject, std::optional<double> onset_s) {
  spec.validate();
  const auto layout = channel_layout(spec.features);
  Matrix z = benign_sigma_units(workload, spec, seed, layout);
  if (!onset_s) {
    if (spec.onsets.empty()) throw Error(ErrorCode::kBadSpec, "no onset choices");
    Rng rng(derive_seed(seed, kOnsetStream));
    std::uniform_int_distribution<std::size_t> pick(0, spec.onsets.size() - 1);
    onset_s = spec.onsets[pick(rng)];
  }
  if (!(*onset_s >= 0.0 && *onset_s < spec.duration_s)) throw Error(ErrorCode::kBadSpec, "onset outside the trace");
  const auto onset_row = static_cast<std::size_t>(std::llround(*onset_s / spec.sample_period_s));
  const std::size_t t_rows = static_cast<std::size_t>(z.rows());

  Rng rng(derive_seed(seed, kEffectStream));
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (const auto& effect : malware.effects) {
    for (std::size_t c : effect.channels)
      if (c >= spec.features) throw Error(ErrorCode::kBadSpec, "effect channel outside the feature range");
    if (effect.shape == EffectShape::kPeriodicBurst && !(effect.period_s >= 2.0 * spec.sample_period_s))
      throw Error(ErrorCode::kBadSpec, "beacon period must be at least two sample periods");
    const double m = effect.magnitude * spec.difficulty;
    std::vector<double> level(t_rows, 0.0);
    switch (effect.shape) {
      case EffectShape::kSustainedShift:
        for (std::size_t t = onset_row; t < t_rows; ++t) level[t] = m;
        break;
      case EffectShape::kRamp:
        for (std::size_t t = onset_row; t < t_rows; ++t) {
          const double dt = static_cast<double>(t - onset_row + 1) * spec.sample_period_s;
          level[t] = m * std::min(1.0, dt / effect.ramp_s);
        }
        break;
      case EffectShape::kPeriodicBurst:
        for (std::size_t t = onset_row; t < t_rows; ++t) {
          const double dt = static_cast<double>(t - onset_row) * spec.sample_period_s;
          if (std::fmod(dt, effect.period_s) < effect.burst_s) level[t] = m;
        }
        break;
      case EffectShape::kIoBurstTrain: {
        double at = *onset_s;
        while (true) {
          const double gap = 1.0 + 7.0 * u(rng);
          const double len = 1.0 + 2.0 * u(rng);
          const double height = m * (0.8 + 0.4 * u(rng));
          const auto first = static_cast<std::size_t>(std::llround(at / spec.sample_period_s));
          const auto last = static_cast<std::size_t>(std::llround((at + len) / spec.sample_period_s));
          if (first >= t_rows) break;
          for (std::size_t t = std::max(first, onset_row); t < std::min(last, t_rows); ++t) level[t] = height;
          at += len + gap;
        }
        break;
      }
    }
    for (std::size_t t = onset_row; t < t_rows; ++t)
      for (std::size_t c : effect.channels) z(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(c)) += level[t];
  }
  std::vector<int> labels(t_rows, 0);
  for (std::size_t t = onset_row; t < t_rows; ++t) labels[t] = 1;
  auto meta = file_meta(seed, subject, malware.kind);
  meta.onset_s = onset_s;
  return finish_trace(z, layout, spec, std::move(meta), std::move(labels));
}

std::vector<Trace> generate_traces(const CorpusSpec& spec) {
  spec.validate();
  static constexpr std::string_view kWorkloads[] = {"os-only", "benchmark", "game",
                                                    "office",  "system-tool", "complex-code"};
  std::vector<Trace> out;
  std::uint64_t index = 0;
  for (const auto& entry : spec.counts) {
    for (std::size_t k = 0; k < entry.count; ++k, ++index) {
      const std::uint64_t seed = derive_seed(spec.seed, index + 1, 0x5eed);
      char suffix[16];
      std::snprintf(suffix, sizeof(suffix), "%02zu", k + 1);
      const std::string subject = subject_prefix(entry.category) + suffix;
      if (telemetry::is_malware_category(entry.category)) {
        Rng pick(derive_seed(seed, kMetaStream, 1));
        std::uniform_int_distribution<std::size_t> w(0, std::size(kWorkloads) - 1);
        out.push_back(generate_malicious_trace(workload_profile(kWorkloads[w(pick)]),
                                               malware_profile(entry.category, spec.features), spec, seed, subject));
      } else {
        out.push_back(generate_benign_trace(workload_profile(entry.category), spec, seed, subject));
      }
    }
  }
  return out;
}

telemetry::Manifest generate_corpus(const CorpusSpec& spec, const std::filesystem::path& dir) {
  const auto traces = generate_traces(spec);
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::kIoFailure, "cannot create " + dir.string() + ": " + ec.message());
  telemetry::Manifest manifest;
  manifest.base_dir = dir;
  for (const auto& t : traces) {
    const std::string name = telemetry::render_filename(t.meta);
    for (const auto& e : manifest.entries)
      if (e.path == name) throw Error(ErrorCode::kBadSpec, "duplicate generated filename " + name);
    telemetry::write_trace_csv(dir / name, t);
    manifest.entries.push_back({name, t.meta, t.rows(), telemetry::Split::kUnassigned});
  }
  std::sort(manifest.entries.begin(), manifest.entries.end(),
            [](const auto& a, const auto& b) { return a.path < b.path; });
  telemetry::write_manifest(dir / "manifest.json", manifest);
  return manifest;
}

bool oracle_flags(const Trace& trace, const CorpusSpec& spec, std::size_t run) {
  if (spec.difficulty <= 0.0 || trace.rows() == 0) return false;
  const auto layout = channel_layout(static_cast<std::size_t>(trace.features.cols()));
  const double threshold = 1.5 * spec.difficulty;
  for (const auto& k : kind_specs()) {
    const auto core = malware_profile(k.kind, layout.size()).core_channels();
    std::size_t streak = 0;
    for (Eigen::Index t = 0; t < trace.features.rows(); ++t) {
      double z = 0.0;
      for (std::size_t c : core) {
        const auto& ch = layout[c];
        z += (trace.features(t, static_cast<Eigen::Index>(c)) - ch.mean) / ch.sigma;
      }
      streak = z / static_cast<double>(core.size()) > threshold ? streak + 1 : 0;
      if (streak >= run) return true;
    }
  }
  return false;
}

}  // namespace sidewatch::synth
