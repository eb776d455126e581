// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "sidewatch/common.hpp"
#include "sidewatch/telemetry.hpp"

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace sidewatch::synth {

/// Sensor channel layout shared by every generated trace: channel c belongs to group
/// c % kGroupCount and carries that group's baseline mean and sigma.
struct Channel {
  std::string name;
  std::size_t group = 0;
  double mean = 0.0;
  double sigma = 1.0;
  double load_loading = 0.0;  // response to the benign workload signal, in sigma per unit load
};
inline constexpr std::size_t kGroupCount = 12;
std::vector<Channel> channel_layout(std::size_t features);

struct WorkloadProfile {
  std::string kind = "os-only";
  double load_amplitude = 0.2;  // sigma units, <= 1
  double load_period_s = 60.0;
  double drift = 0.1;           // sigma units over the whole trace
};
WorkloadProfile workload_profile(std::string_view kind);

enum class EffectShape { kSustainedShift, kRamp, kPeriodicBurst, kIoBurstTrain };
std::string_view effect_shape_name(EffectShape s);

struct Effect {
  EffectShape shape = EffectShape::kSustainedShift;
  std::vector<std::size_t> channels;
  double magnitude = 3.0;  // sigma units at difficulty 1
  double period_s = 10.0;  // periodic bursts
  double burst_s = 3.0;    // periodic-burst on-time
  double ramp_s = 60.0;    // ramp rise time
};

struct MalwareProfile {
  std::string kind = "ransomware";
  std::vector<Effect> effects;  // effects[0] is the sustained shift on the core channels
  const std::vector<std::size_t>& core_channels() const { return effects.front().channels; }
};
MalwareProfile malware_profile(std::string_view kind, std::size_t features);

struct CategoryCount {
  std::string category;
  std::size_t count = 0;
  bool operator==(const CategoryCount&) const = default;
};

struct CorpusSpec {
  std::vector<CategoryCount> counts;
  std::size_t features = 132;
  double duration_s = 480.0;
  double sample_period_s = 0.5;
  std::vector<double> onsets{90.0, 120.0, 150.0};
  std::uint64_t seed = 1;
  double difficulty = 1.0;

  /// Throws BadSpec.
  void validate() const;
  std::size_t rows() const;
};

/// Default composition: 28 benign workloads and 29 malware samples at 132 features.
CorpusSpec default_corpus_spec();

/// Workload-only trace: correlated sensor noise plus the profile's load dynamics.
telemetry::Trace generate_benign_trace(const WorkloadProfile& workload, const CorpusSpec& spec, std::uint64_t seed,
                                       const std::string& subject = "benign00");
/// Same benign dynamics as generate_benign_trace(workload, spec, seed) with malware
/// effects from the onset row on; rows before the onset are identical to that trace.
/// The onset is drawn from spec.onsets with the file seed unless given.
telemetry::Trace generate_malicious_trace(const WorkloadProfile& workload, const MalwareProfile& malware,
                                          const CorpusSpec& spec, std::uint64_t seed,
                                          const std::string& subject = "malware00",
                                          std::optional<double> onset_s = std::nullopt);

/// Every trace of the corpus, in generation order.
std::vector<telemetry::Trace> generate_traces(const CorpusSpec& spec);
/// Writes the traces as CSV files plus manifest.json into `dir`; returns the manifest.
telemetry::Manifest generate_corpus(const CorpusSpec& spec, const std::filesystem::path& dir);

/// Learnability oracle that knows the generator: flags a file once the mean standardized
/// deviation over some malware kind's core channels stays above half the configured
/// shift (1.5 sigma x difficulty) for `run` consecutive rows.
bool oracle_flags(const telemetry::Trace& trace, const CorpusSpec& spec, std::size_t run = 50);

}  // namespace sidewatch::synth
