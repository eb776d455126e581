// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "sidewatch/common.hpp"

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace sidewatch::telemetry {

// Workload categories (label 0) and malware categories (label 1) used in trace filenames.
inline constexpr std::string_view kBenignCategories[] = {
    "benign", "os-only", "benchmark", "game", "office", "system-tool", "complex-code"};
inline constexpr std::string_view kMalwareCategories[] = {
    "ransomware", "worm", "spyware", "trojan-backdoor", "virus", "rootkit"};

bool is_known_category(std::string_view category);
bool is_malware_category(std::string_view category);

struct TraceMeta {
  std::string subject_name;
  std::string os;
  std::string hardware_id;
  std::string category = "benign";
  std::optional<double> onset_s;
  double sample_period_s = 0.5;

  bool is_malware() const { return is_malware_category(category); }
  bool operator==(const TraceMeta&) const = default;
};

/// A capture session. Feature rows are stored as one T x F matrix; `times` and `labels`
/// hold the per-row time offset and 0/1 label. `labeled` is false for live captures
/// that carry no label column, in which case `labels` is all zero.
struct Trace {
  TraceMeta meta;
  std::vector<std::string> header;
  std::vector<double> times;
  Matrix features;
  std::vector<int> labels;
  bool labeled = true;

  std::size_t rows() const { return times.size(); }
  std::size_t feature_count() const { return header.size(); }
  /// Row nearest the malware onset: round(onset_s / sample_period_s).
  std::optional<std::size_t> onset_row() const;
  bool operator==(const Trace& other) const;
};

struct TraceSchema {
  std::string time_column = "time_s";
  std::string label_column = "label";
  /// Empty selects every remaining column holding at least one numeric cell.
  std::vector<std::string> feature_columns;
  double sample_period_s = 0.5;
  /// Used instead of the filename convention when set.
  std::optional<TraceMeta> meta;
};

Trace parse_trace_csv(const std::filesystem::path& path, const TraceSchema& schema = {});
Trace parse_trace_csv_text(std::string_view text, const TraceMeta& meta, const TraceSchema& schema = {});
void write_trace_csv(const std::filesystem::path& path, const Trace& trace);
std::string render_trace_csv(const Trace& trace);

/// `<subject>_<os>_<hardware>_<category>[_<onset>].csv`; the onset segment is present
/// exactly for malware categories.
TraceMeta parse_trace_filename(std::string_view name);
std::string render_filename(const TraceMeta& meta);

struct Violation {
  std::string invariant;
  std::optional<std::size_t> row;
  std::string message;
};

std::vector<Violation> validate_trace(const Trace& trace);

enum class Split { kUnassigned, kTrain, kTest };
std::string_view split_name(Split split);
Split parse_split(std::string_view name);

struct ManifestEntry {
  std::string path;  // relative to the manifest's base directory
  TraceMeta meta;
  std::size_t rows = 0;
  Split split = Split::kUnassigned;
};

struct SkippedFile {
  std::string path;
  std::string reason;
};

struct Manifest {
  std::filesystem::path base_dir;
  std::vector<ManifestEntry> entries;
  std::vector<SkippedFile> skipped;
};

inline constexpr int kManifestVersion = 1;

Manifest build_manifest(const std::filesystem::path& dir, const TraceSchema& schema = {});
void write_manifest(const std::filesystem::path& path, const Manifest& manifest);
std::string render_manifest(const Manifest& manifest);
Manifest read_manifest(const std::filesystem::path& path);
/// Problems found when checking a manifest against the files on disk.
std::vector<std::string> validate_manifest(const Manifest& manifest, const TraceSchema& schema = {});
/// Loads every entry with the given split tag, in manifest order.
std::vector<Trace> load_split(const Manifest& manifest, Split split, const TraceSchema& schema = {});

// Shortest round-trip decimal form of a double.
std::string format_double(double value);

}  // namespace sidewatch::telemetry
