// SPDX-License-Identifier: Apache-2.0
#include "sidewatch/telemetry.hpp"

#include "sidewatch/error.hpp"

#include <json.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

namespace sidewatch::telemetry {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

// Splits one CSV record. Double-quoted fields may contain commas; "" is an escaped quote.
std::vector<std::string> split_record(std::string_view line) {
  std::vector<std::string> out;
  std::string field;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        field.push_back('"');
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        field.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.emplace_back(trim(field));
      field.clear();
    } else {
      field.push_back(c);
    }
  }
  out.emplace_back(trim(field));
  return out;
}

std::optional<double> parse_number(std::string_view s) {
  s = trim(s);
  if (s.empty()) return std::nullopt;
  if (s.front() == '+') s.remove_prefix(1);
  double value = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
  if (ec != std::errc() || ptr != s.data() + s.size() || !std::isfinite(value)) return std::nullopt;
  return value;
}

std::vector<std::string_view> split_lines(std::string_view text) {
  std::vector<std::string_view> lines;
  std::size_t start = 0;
  while (start <= text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(start, end - start);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    lines.push_back(line);
    start = end + 1;
  }
  // Drop trailing blank lines; interior blank lines are skipped by the parser.
  while (!lines.empty() && trim(lines.back()).empty()) lines.pop_back();
  return lines;
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIoFailure, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::ptrdiff_t find_column(const std::vector<std::string>& header, const std::string& name) {
  const auto it = std::find(header.begin(), header.end(), name);
  return it == header.end() ? -1 : it - header.begin();
}

json meta_to_json(const TraceMeta& meta) {
  json j;
  j["subject"] = meta.subject_name;
  j["os"] = meta.os;
  j["hardware_id"] = meta.hardware_id;
  j["category"] = meta.category;
  j["onset_s"] = meta.onset_s ? json(*meta.onset_s) : json(nullptr);
  j["sample_period_s"] = meta.sample_period_s;
  return j;
}

TraceMeta meta_from_json(const json& j) {
  TraceMeta meta;
  meta.subject_name = j.at("subject").get<std::string>();
  meta.os = j.at("os").get<std::string>();
  meta.hardware_id = j.at("hardware_id").get<std::string>();
  meta.category = j.at("category").get<std::string>();
  if (!j.at("onset_s").is_null()) meta.onset_s = j.at("onset_s").get<double>();
  meta.sample_period_s = j.at("sample_period_s").get<double>();
  return meta;
}

}  // namespace

bool is_known_category(std::string_view category) {
  return std::find(std::begin(kBenignCategories), std::end(kBenignCategories), category) !=
             std::end(kBenignCategories) ||
         is_malware_category(category);
}

bool is_malware_category(std::string_view category) {
  return std::find(std::begin(kMalwareCategories), std::end(kMalwareCategories), category) !=
         std::end(kMalwareCategories);
}

std::optional<std::size_t> Trace::onset_row() const {
  if (!meta.onset_s) return std::nullopt;
  return static_cast<std::size_t>(std::llround(*meta.onset_s / meta.sample_period_s));
}

bool Trace::operator==(const Trace& other) const {
  return meta == other.meta && header == other.header && times == other.times &&
         labels == other.labels && labeled == other.labeled &&
         features.rows() == other.features.rows() && features.cols() == other.features.cols() &&
         (features.array() == other.features.array()).all();
}

std::string format_double(double value) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), value);
  if (ec != std::errc()) throw Error(ErrorCode::kInvalidArgument, "unformattable value");
  return std::string(buf, ptr);
}

Trace parse_trace_csv_text(std::string_view text, const TraceMeta& meta, const TraceSchema& schema) {
  const auto lines = split_lines(text);
  if (lines.empty()) throw Error(ErrorCode::kEmptyTrace, "no header line");

  Trace trace;
  trace.meta = meta;
  const std::vector<std::string> columns = split_record(lines.front());
  const std::ptrdiff_t time_idx = find_column(columns, schema.time_column);
  const std::ptrdiff_t label_idx = find_column(columns, schema.label_column);

  std::vector<std::vector<std::string>> records;
  records.reserve(lines.size() - 1);
  for (std::size_t li = 1; li < lines.size(); ++li) {
    if (trim(lines[li]).empty()) continue;
    auto record = split_record(lines[li]);
    if (record.size() != columns.size()) {
      throw Error(ErrorCode::kRaggedRow, "line " + std::to_string(li + 1) + " has " +
                                             std::to_string(record.size()) + " fields, expected " +
                                             std::to_string(columns.size()));
    }
    records.push_back(std::move(record));
  }

  std::vector<std::size_t> feature_idx;
  if (!schema.feature_columns.empty()) {
    for (const auto& name : schema.feature_columns) {
      const auto idx = find_column(columns, name);
      if (idx < 0) throw Error(ErrorCode::kMissingColumn, "column '" + name + "' not in header");
      feature_idx.push_back(static_cast<std::size_t>(idx));
    }
  } else {
    for (std::size_t c = 0; c < columns.size(); ++c) {
      if (static_cast<std::ptrdiff_t>(c) == time_idx || static_cast<std::ptrdiff_t>(c) == label_idx) continue;
      const bool numeric = records.empty() || std::any_of(records.begin(), records.end(), [&](const auto& r) {
                             return parse_number(r[c]).has_value();
                           });
      if (numeric) feature_idx.push_back(c);
    }
  }
  if (records.empty()) throw Error(ErrorCode::kEmptyTrace, "header only, no data rows");

  const std::size_t rows = records.size();
  const std::size_t width = feature_idx.size();
  for (auto idx : feature_idx) trace.header.push_back(columns[idx]);
  trace.features.resize(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(width));
  trace.times.resize(rows);
  trace.labels.assign(rows, 0);
  trace.labeled = label_idx >= 0;

  for (std::size_t r = 0; r < rows; ++r) {
    const auto& rec = records[r];
    if (time_idx >= 0) {
      const auto t = parse_number(rec[static_cast<std::size_t>(time_idx)]);
      if (!t || *t < 0.0) {
        throw Error(ErrorCode::kBadCell, "row " + std::to_string(r) + ": bad time '" +
                                             rec[static_cast<std::size_t>(time_idx)] + "'");
      }
      trace.times[r] = *t;
      if (r > 0 && !(trace.times[r] > trace.times[r - 1])) {
        throw Error(ErrorCode::kNonMonotonicTime, "time does not increase at row " + std::to_string(r));
      }
    } else {
      trace.times[r] = static_cast<double>(r) * meta.sample_period_s;
    }
    if (label_idx >= 0) {
      const auto l = parse_number(rec[static_cast<std::size_t>(label_idx)]);
      if (!l || (*l != 0.0 && *l != 1.0)) {
        throw Error(ErrorCode::kBadCell, "row " + std::to_string(r) + ": label must be 0 or 1");
      }
      trace.labels[r] = static_cast<int>(*l);
    }
    for (std::size_t c = 0; c < width; ++c) {
      const auto v = parse_number(rec[feature_idx[c]]);
      const auto ri = static_cast<Eigen::Index>(r);
      const auto ci = static_cast<Eigen::Index>(c);
      // Missing or non-numeric sensor cells carry the previous row's value forward.
      trace.features(ri, ci) = v ? *v : (r == 0 ? 0.0 : trace.features(ri - 1, ci));
    }
  }
  return trace;
}

Trace parse_trace_csv(const fs::path& path, const TraceSchema& schema) {
  TraceMeta meta;
  if (schema.meta) {
    meta = *schema.meta;
  } else {
    meta = parse_trace_filename(path.filename().string());
    meta.sample_period_s = schema.sample_period_s;
  }
  if (!fs::exists(path)) throw Error(ErrorCode::kIoFailure, "no such file " + path.string());
  return parse_trace_csv_text(read_file(path), meta, schema);
}

std::string render_trace_csv(const Trace& trace) {
  for (const auto& name : trace.header) {
    if (name.find_first_of(",\n\r\"") != std::string::npos) {
      throw Error(ErrorCode::kInvalidArgument, "feature name '" + name + "' is not CSV-safe");
    }
  }
  std::string out = "time_s";
  for (const auto& name : trace.header) out += "," + name;
  if (trace.labeled) out += ",label";
  out += '\n';
  for (std::size_t r = 0; r < trace.rows(); ++r) {
    out += format_double(trace.times[r]);
    for (Eigen::Index c = 0; c < trace.features.cols(); ++c) {
      out += ',';
      out += format_double(trace.features(static_cast<Eigen::Index>(r), c));
    }
    if (trace.labeled) out += trace.labels[r] ? ",1" : ",0";
    out += '\n';
  }
  return out;
}

void write_trace_csv(const fs::path& path, const Trace& trace) {
  const std::string text = render_trace_csv(trace);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIoFailure, "cannot write " + path.string());
  out << text;
  if (!out) throw Error(ErrorCode::kIoFailure, "write failed for " + path.string());
}

TraceMeta parse_trace_filename(std::string_view name) {
  std::string_view stem = name;
  if (const auto slash = stem.find_last_of("/\\"); slash != std::string_view::npos) stem.remove_prefix(slash + 1);
  if (stem.size() >= 4 && stem.substr(stem.size() - 4) == ".csv") stem.remove_suffix(4);

  std::vector<std::string> parts;
  std::size_t start = 0;
  while (true) {
    const auto pos = stem.find('_', start);
    parts.emplace_back(stem.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  if (parts.size() != 4 && parts.size() != 5) {
    throw Error(ErrorCode::kMalformedName, "'" + std::string(name) + "' has " + std::to_string(parts.size()) +
                                               " segments, expected 4 (benign) or 5 (malware)");
  }
  for (const auto& p : parts) {
    if (p.empty()) throw Error(ErrorCode::kMalformedName, "'" + std::string(name) + "' has an empty segment");
  }

  TraceMeta meta;
  meta.subject_name = parts[0];
  meta.os = parts[1];
  meta.hardware_id = parts[2];
  meta.category = parts[3];
  if (!is_known_category(meta.category)) {
    throw Error(ErrorCode::kUnknownCategory, "unknown category '" + meta.category + "'");
  }
  if (is_malware_category(meta.category)) {
    if (parts.size() != 5) {
      throw Error(ErrorCode::kMalformedName, "malware file '" + std::string(name) + "' lacks an onset segment");
    }
    const auto onset = parse_number(parts[4]);
    if (!onset || *onset < 0.0) throw Error(ErrorCode::kBadOnset, "bad onset '" + parts[4] + "'");
    meta.onset_s = *onset;
  } else if (parts.size() == 5) {
    throw Error(ErrorCode::kMalformedName, "benign file '" + std::string(name) + "' carries an onset segment");
  }
  return meta;
}

std::string render_filename(const TraceMeta& meta) {
  for (const auto* field : {&meta.subject_name, &meta.os, &meta.hardware_id}) {
    if (field->empty() || field->find_first_of("_/\\") != std::string::npos) {
      throw Error(ErrorCode::kMalformedName, "segment '" + *field + "' is empty or contains a separator");
    }
  }
  if (!is_known_category(meta.category)) throw Error(ErrorCode::kUnknownCategory, meta.category);
  std::string name = meta.subject_name + "_" + meta.os + "_" + meta.hardware_id + "_" + meta.category;
  if (meta.is_malware()) {
    if (!meta.onset_s || *meta.onset_s < 0.0) throw Error(ErrorCode::kBadOnset, "malware meta without onset");
    name += "_" + format_double(*meta.onset_s);
  }
  return name + ".csv";
}

std::vector<Violation> validate_trace(const Trace& trace) {
  std::vector<Violation> out;
  const auto add = [&out](std::string invariant, std::optional<std::size_t> row, std::string msg) {
    out.push_back({std::move(invariant), row, std::move(msg)});
  };
  const TraceMeta& meta = trace.meta;
  const std::size_t rows = trace.rows();

  if (!is_known_category(meta.category)) add("category", std::nullopt, "unknown category '" + meta.category + "'");
  if (!(meta.sample_period_s > 0.0)) add("sample-period", std::nullopt, "sample period must be positive");
  if (meta.is_malware() && !meta.onset_s) add("onset", std::nullopt, "malware trace without onset");
  if (!meta.is_malware() && meta.onset_s) add("onset", std::nullopt, "benign trace with an onset");
  if (static_cast<std::size_t>(trace.features.cols()) != trace.header.size()) {
    add("feature-width", std::nullopt, "feature matrix width differs from header");
  }
  if (static_cast<std::size_t>(trace.features.rows()) != rows || trace.labels.size() != rows) {
    add("row-count", std::nullopt, "times, features and labels disagree on row count");
    return out;
  }
  if (rows == 0) add("non-empty", std::nullopt, "trace has no rows");

  for (std::size_t r = 0; r < rows; ++r) {
    if (!(trace.times[r] >= 0.0)) add("time-nonnegative", r, "negative time at row " + std::to_string(r));
    if (r > 0 && !(trace.times[r] > trace.times[r - 1])) {
      add("time-increasing", r, "time does not increase at row " + std::to_string(r));
    }
    if (!trace.features.row(static_cast<Eigen::Index>(r)).allFinite()) {
      add("finite", r, "non-finite feature at row " + std::to_string(r));
    }
    if (trace.labels[r] != 0 && trace.labels[r] != 1) {
      add("label-domain", r, "label outside {0,1} at row " + std::to_string(r));
    }
  }
  if (!trace.labeled) return out;

  if (!meta.is_malware()) {
    for (std::size_t r = 0; r < rows; ++r) {
      if (trace.labels[r] == 1) add("benign-labels", r, "benign trace contains malicious label at row " + std::to_string(r));
    }
    return out;
  }
  if (meta.onset_s) {
    const std::size_t onset = *trace.onset_row();
    if (onset >= rows) add("onset-in-range", std::nullopt, "onset row " + std::to_string(onset) + " beyond trace end");
    for (std::size_t r = 0; r < std::min(onset, rows); ++r) {
      if (trace.labels[r] == 1) add("pre-onset-benign", r, "malicious label before onset at row " + std::to_string(r));
    }
  }
  if (std::none_of(trace.labels.begin(), trace.labels.end(), [](int l) { return l == 1; })) {
    add("malware-has-malicious-rows", std::nullopt, "malware trace has no malicious rows");
  }
  return out;
}

std::string_view split_name(Split split) {
  switch (split) {
    case Split::kTrain: return "train";
    case Split::kTest: return "test";
    case Split::kUnassigned: break;
  }
  return "unassigned";
}

Split parse_split(std::string_view name) {
  if (name == "train") return Split::kTrain;
  if (name == "test") return Split::kTest;
  if (name == "unassigned") return Split::kUnassigned;
  throw Error(ErrorCode::kBadConfig, "unknown split tag '" + std::string(name) + "'");
}

Manifest build_manifest(const fs::path& dir, const TraceSchema& schema) {
  std::error_code ec;
  if (!fs::is_directory(dir, ec)) throw Error(ErrorCode::kIoFailure, "not a readable directory: " + dir.string());
  std::vector<fs::path> files;
  for (fs::directory_iterator it(dir, ec), end; !ec && it != end; it.increment(ec)) {
    if (it->is_regular_file() && it->path().extension() == ".csv") files.push_back(it->path());
  }
  if (ec) throw Error(ErrorCode::kIoFailure, "cannot list " + dir.string() + ": " + ec.message());
  std::sort(files.begin(), files.end());

  Manifest manifest;
  manifest.base_dir = dir;
  for (const auto& file : files) {
    const std::string rel = file.filename().string();
    try {
      TraceSchema per_file = schema;
      per_file.meta.reset();
      Trace trace = parse_trace_csv(file, per_file);
      manifest.entries.push_back({rel, trace.meta, trace.rows(), Split::kUnassigned});
    } catch (const Error& e) {
      manifest.skipped.push_back({rel, e.what()});
    }
  }
  return manifest;
}

std::string render_manifest(const Manifest& manifest) {
  json j;
  j["format"] = "sidewatch-manifest";
  j["version"] = kManifestVersion;
  j["entries"] = json::array();
  for (const auto& e : manifest.entries) {
    json je = meta_to_json(e.meta);
    je["path"] = e.path;
    je["rows"] = e.rows;
    je["split"] = std::string(split_name(e.split));
    j["entries"].push_back(std::move(je));
  }
  j["skipped"] = json::array();
  for (const auto& s : manifest.skipped) j["skipped"].push_back({{"path", s.path}, {"reason", s.reason}});
  return j.dump(2) + "\n";
}

void write_manifest(const fs::path& path, const Manifest& manifest) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIoFailure, "cannot write " + path.string());
  out << render_manifest(manifest);
  if (!out) throw Error(ErrorCode::kIoFailure, "write failed for " + path.string());
}

Manifest read_manifest(const fs::path& path) {
  const std::string text = read_file(path);
  Manifest manifest;
  manifest.base_dir = path.parent_path();
  try {
    const json j = json::parse(text);
    if (j.at("format").get<std::string>() != "sidewatch-manifest") {
      throw Error(ErrorCode::kBadConfig, path.string() + " is not a manifest");
    }
    if (j.at("version").get<int>() != kManifestVersion) {
      throw Error(ErrorCode::kVersionMismatch, "manifest version " + j.at("version").dump());
    }
    for (const auto& je : j.at("entries")) {
      ManifestEntry e;
      e.path = je.at("path").get<std::string>();
      e.meta = meta_from_json(je);
      e.rows = je.at("rows").get<std::size_t>();
      e.split = parse_split(je.at("split").get<std::string>());
      manifest.entries.push_back(std::move(e));
    }
    if (j.contains("skipped")) {
      for (const auto& js : j.at("skipped")) {
        manifest.skipped.push_back({js.at("path").get<std::string>(), js.at("reason").get<std::string>()});
      }
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kBadConfig, "malformed manifest " + path.string() + ": " + e.what());
  }
  return manifest;
}

std::vector<std::string> validate_manifest(const Manifest& manifest, const TraceSchema& schema) {
  std::vector<std::string> problems;
  std::set<std::string> seen;
  for (const auto& e : manifest.entries) {
    if (!seen.insert(e.path).second) problems.push_back("duplicate path " + e.path);
    TraceSchema per_file = schema;
    per_file.meta = e.meta;
    try {
      const Trace trace = parse_trace_csv(manifest.base_dir / e.path, per_file);
      if (trace.rows() != e.rows) {
        problems.push_back(e.path + ": manifest lists " + std::to_string(e.rows) + " rows, file has " +
                           std::to_string(trace.rows()));
      }
      for (const auto& v : validate_trace(trace)) problems.push_back(e.path + ": " + v.message);
    } catch (const Error& err) {
      problems.push_back(e.path + ": " + err.what());
    }
  }
  return problems;
}

std::vector<Trace> load_split(const Manifest& manifest, Split split, const TraceSchema& schema) {
  std::vector<Trace> out;
  for (const auto& e : manifest.entries) {
    if (e.split != split) continue;
    TraceSchema per_file = schema;
    per_file.meta = e.meta;
    out.push_back(parse_trace_csv(manifest.base_dir / e.path, per_file));
  }
  return out;
}

}  // namespace sidewatch::telemetry
