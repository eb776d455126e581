// SPDX-License-Identifier: Apache-2.0
#include "sidewatch/sidewatch.h"

#include "sidewatch/config.hpp"
#include "sidewatch/detector.hpp"
#include "sidewatch/error.hpp"
#include "sidewatch/pipeline.hpp"

#include <json.hpp>

#include <cstdlib>
#include <cstring>
#include <memory>
#include <sstream>

using namespace sidewatch;
using nlohmann::json;

struct sw_config {
  config::ConfigBuilder builder;
};

struct sw_model {
  std::shared_ptr<const models::ModelArtifact> model;
};

struct sw_stream {
  std::shared_ptr<const models::ModelArtifact> model;
  detect::StreamDetector detector;
};

namespace {

thread_local std::string g_last_error;

template <typename F>
int guarded(F&& f) {
  try {
    f();
    g_last_error.clear();
    return SW_OK;
  } catch (const Error& e) {
    g_last_error = e.what();
    return static_cast<int>(e.code());
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return SW_INTERNAL;
  } catch (...) {
    g_last_error = "unknown failure";
    return SW_INTERNAL;
  }
}

void require(const void* p, const char* what) {
  if (!p) throw Error(ErrorCode::kInvalidArgument, std::string(what) + " must not be NULL");
}

char* dup(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (!out) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

void put(char** out, const std::string& s) {
  if (out) *out = dup(s);
}

std::filesystem::path out_dir_for(const config::RunConfig& cfg, const char* dir) {
  if (dir && *dir) return dir;
  if (!cfg.output_dir.empty()) return cfg.output_dir;
  return config::default_run_dir(cfg.seed);
}

}  // namespace

extern "C" {

const char* sw_version(void) { return "0.1.0"; }

const char* sw_status_name(int status) {
  if (status == SW_OK) return "Ok";
  if (status == SW_INTERNAL) return "Internal";
  if (status >= 1 && status <= 27) return error_name(static_cast<ErrorCode>(status)).data();
  return "Unknown";
}

const char* sw_last_error(void) { return g_last_error.c_str(); }

void sw_string_free(char* s) { std::free(s); }

int sw_config_new(sw_config** out) {
  return guarded([&] {
    require(out, "out");
    *out = new sw_config{};
  });
}

void sw_config_free(sw_config* cfg) { delete cfg; }

int sw_config_apply_file(sw_config* cfg, const char* path) {
  return guarded([&] {
    require(cfg, "cfg");
    require(path, "path");
    cfg->builder.apply_file(path);
  });
}

int sw_config_apply_json(sw_config* cfg, const char* json_text) {
  return guarded([&] {
    require(cfg, "cfg");
    require(json_text, "json_text");
    cfg->builder.apply_text(json_text);
  });
}

int sw_config_set(sw_config* cfg, const char* assignment) {
  return guarded([&] {
    require(cfg, "cfg");
    require(assignment, "assignment");
    cfg->builder.apply_override(assignment);
  });
}

int sw_config_render(const sw_config* cfg, char** out_json) {
  return guarded([&] {
    require(cfg, "cfg");
    require(out_json, "out_json");
    put(out_json, config::render_config(cfg->builder.resolve()));
  });
}

int sw_config_get(const sw_config* cfg, const char* key, char** out_json) {
  return guarded([&] {
    require(cfg, "cfg");
    require(key, "key");
    require(out_json, "out_json");
    const json doc = json::parse(config::render_config(cfg->builder.resolve()));
    std::string ptr = "/" + std::string(key);
    for (auto& ch : ptr)
      if (ch == '.') ch = '/';
    const json::json_pointer p(ptr);
    if (!doc.contains(p)) throw Error(ErrorCode::kBadConfig, "unknown key '" + std::string(key) + "'");
    put(out_json, doc.at(p).dump());
  });
}

int sw_config_describe(char** out_text) {
  return guarded([&] {
    require(out_text, "out_text");
    std::string text;
    for (const auto& k : config::keys()) text += k.key + "\t" + k.default_text + "\t" + k.help + "\n";
    put(out_text, text);
  });
}

int sw_generate(const sw_config* cfg, const char* dir, size_t* out_files) {
  return guarded([&] {
    require(cfg, "cfg");
    require(dir, "dir");
    const auto m = pipeline::generate(cfg->builder.resolve(), dir);
    if (out_files) *out_files = m.entries.size();
  });
}

int sw_validate_trace(const char* path, char** out_json) {
  return guarded([&] {
    require(path, "path");
    require(out_json, "out_json");
    const auto trace = telemetry::parse_trace_csv(path);
    json arr = json::array();
    for (const auto& v : telemetry::validate_trace(trace))
      arr.push_back({{"invariant", v.invariant}, {"row", v.row ? json(*v.row) : json(nullptr)}, {"message", v.message}});
    put(out_json, arr.dump());
  });
}

int sw_validate_manifest(const char* manifest_path, char** out_json) {
  return guarded([&] {
    require(manifest_path, "manifest_path");
    require(out_json, "out_json");
    const auto problems = telemetry::validate_manifest(telemetry::read_manifest(manifest_path));
    put(out_json, json(problems).dump());
  });
}

int sw_index_corpus(const char* dir, const char* manifest_out, size_t* out_entries, size_t* out_skipped) {
  return guarded([&] {
    require(dir, "dir");
    require(manifest_out, "manifest_out");
    const auto m = pipeline::index(dir, manifest_out);
    if (out_entries) *out_entries = m.entries.size();
    if (out_skipped) *out_skipped = m.skipped.size();
  });
}

int sw_split(const sw_config* cfg, const char* manifest_in, const char* manifest_out) {
  return guarded([&] {
    require(cfg, "cfg");
    require(manifest_in, "manifest_in");
    require(manifest_out, "manifest_out");
    pipeline::split(cfg->builder.resolve(), manifest_in, manifest_out);
  });
}

int sw_train(const sw_config* cfg, const char* manifest, const char* artifact_out, char** out_log) {
  return guarded([&] {
    require(cfg, "cfg");
    require(manifest, "manifest");
    require(artifact_out, "artifact_out");
    const auto result = pipeline::train(cfg->builder.resolve(), manifest, artifact_out);
    put(out_log, result.log.render());
  });
}

int sw_evaluate(const sw_config* cfg, const char* manifest, const char* const* artifacts, size_t count,
                const char* out_dir, char** out_summary) {
  return guarded([&] {
    require(cfg, "cfg");
    require(manifest, "manifest");
    if (count) require(artifacts, "artifacts");
    const auto c = cfg->builder.resolve();
    std::vector<std::filesystem::path> paths;
    for (size_t i = 0; i < count; ++i) {
      require(artifacts[i], "artifact path");
      paths.emplace_back(artifacts[i]);
    }
    const auto report = pipeline::evaluate(c, manifest, paths, out_dir_for(c, out_dir));
    put(out_summary, eval::render_summary(report));
  });
}

int sw_sweep(const sw_config* cfg, const char* kind, const char* manifest, const char* artifact, const char* out_dir,
             char** out_summary) {
  return guarded([&] {
    require(cfg, "cfg");
    require(kind, "kind");
    require(manifest, "manifest");
    const auto c = cfg->builder.resolve();
    const auto report = pipeline::sweep(c, pipeline::parse_sweep_kind(kind), manifest, artifact ? artifact : "",
                                        out_dir_for(c, out_dir));
    put(out_summary, eval::render_summary(report));
  });
}

int sw_model_load(const char* path, sw_model** out) {
  return guarded([&] {
    require(path, "path");
    require(out, "out");
    *out = new sw_model{std::make_shared<const models::ModelArtifact>(models::load_model(path))};
  });
}

void sw_model_free(sw_model* model) { delete model; }

int sw_model_inspect(const sw_model* model, int as_json, char** out_text) {
  return guarded([&] {
    require(model, "model");
    require(out_text, "out_text");
    put(out_text, as_json ? pipeline::inspect_json(*model->model) : pipeline::inspect_text(*model->model));
  });
}

int sw_model_parameter_count(const sw_model* model, size_t* out) {
  return guarded([&] {
    require(model, "model");
    require(out, "out");
    *out = model->model->parameter_count();
  });
}

int sw_model_input_dim(const sw_model* model, size_t* out) {
  return guarded([&] {
    require(model, "model");
    require(out, "out");
    *out = model->model->raw_input_dim();
  });
}

int sw_model_predict_file(const sw_model* model, const char* trace_path, double* out, size_t capacity,
                          size_t* out_count) {
  return guarded([&] {
    require(model, "model");
    require(trace_path, "trace_path");
    require(out_count, "out_count");
    const auto trace = telemetry::parse_trace_csv(trace_path);
    const auto probs = detect::detect_trace(*model->model, trace, detect::DetectorConfig{}).probabilities;
    *out_count = probs.size();
    if (!out) return;
    if (capacity < probs.size())
      throw Error(ErrorCode::kInvalidArgument,
                  "output buffer holds " + std::to_string(capacity) + " values, need " + std::to_string(probs.size()));
    std::copy(probs.begin(), probs.end(), out);
  });
}

int sw_stream_new(const sw_model* model, const sw_config* cfg, sw_stream** out) {
  return guarded([&] {
    require(model, "model");
    require(cfg, "cfg");
    require(out, "out");
    const auto c = cfg->builder.resolve();
    *out = new sw_stream{model->model, detect::StreamDetector(model->model, c.detector)};
  });
}

void sw_stream_free(sw_stream* stream) { delete stream; }

int sw_stream_push(sw_stream* stream, double t, const double* row, size_t width, int* out_event,
                   double* out_probability) {
  return guarded([&] {
    require(stream, "stream");
    if (width) require(row, "row");
    if (width != stream->model->raw_input_dim())
      throw Error(ErrorCode::kShapeMismatch, "row has " + std::to_string(width) + " values, model expects " +
                                                 std::to_string(stream->model->raw_input_dim()));
    RowVector r(static_cast<Eigen::Index>(width));
    for (size_t i = 0; i < width; ++i) r(static_cast<Eigen::Index>(i)) = row[i];
    const auto ev = stream->detector.push(t, r);
    if (out_event) *out_event = static_cast<int>(ev);
    if (out_probability) *out_probability = stream->detector.last_probability().value_or(-1.0);
  });
}

int sw_stream_status(const sw_stream* stream, size_t* out_rows, int* out_alerted, int64_t* out_alert_row) {
  return guarded([&] {
    require(stream, "stream");
    const auto& s = stream->detector.state();
    if (out_rows) *out_rows = s.rows;
    if (out_alerted) *out_alerted = s.alert_row ? 1 : 0;
    if (out_alert_row) *out_alert_row = s.alert_row ? static_cast<int64_t>(*s.alert_row) : -1;
  });
}

int sw_stream_save(const sw_stream* stream, char** out_json) {
  return guarded([&] {
    require(stream, "stream");
    require(out_json, "out_json");
    put(out_json, stream->detector.save_state());
  });
}

int sw_stream_restore(sw_stream* stream, const char* json_text) {
  return guarded([&] {
    require(stream, "stream");
    require(json_text, "json_text");
    stream->detector.restore_state(json_text);
  });
}

int sw_stream_event_json(const sw_stream* stream, double t, int event, char** out_json) {
  return guarded([&] {
    require(stream, "stream");
    require(out_json, "out_json");
    if (event < SW_EVENT_NONE || event > SW_EVENT_STILL_MALICIOUS)
      throw Error(ErrorCode::kInvalidArgument, "unknown event " + std::to_string(event));
    const auto rows = stream->detector.state().rows;
    put(out_json, detect::render_event(t, rows ? rows - 1 : 0, stream->detector.model_id(),
                                       static_cast<detect::StreamEvent>(event)));
  });
}

}  // extern "C"
