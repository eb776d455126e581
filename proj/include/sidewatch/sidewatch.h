/* SPDX-License-Identifier: Apache-2.0 */
#ifndef SIDEWATCH_SIDEWATCH_H
#define SIDEWATCH_SIDEWATCH_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define SW_API __declspec(dllexport)
#else
#define SW_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

/* Status codes. 0 is success; every other value names the failure class. */
typedef enum sw_status {
  SW_OK = 0,
  SW_INVALID_ARGUMENT = 1,
  SW_IO_FAILURE = 2,
  SW_MISSING_COLUMN = 3,
  SW_RAGGED_ROW = 4,
  SW_NON_MONOTONIC_TIME = 5,
  SW_EMPTY_TRACE = 6,
  SW_BAD_CELL = 7,
  SW_MALFORMED_NAME = 8,
  SW_UNKNOWN_CATEGORY = 9,
  SW_BAD_ONSET = 10,
  SW_TOO_FEW_ROWS = 11,
  SW_INDEX_OUT_OF_RANGE = 12,
  SW_SHAPE_MISMATCH = 13,
  SW_KERNEL_TOO_LONG = 14,
  SW_STALE_CACHE = 15,
  SW_BAD_SHAPE = 16,
  SW_NO_DATA = 17,
  SW_WRONG_SEQUENCE_LENGTH = 18,
  SW_VERSION_MISMATCH = 19,
  SW_CORRUPT_ARTIFACT = 20,
  SW_ALERT_BEFORE_ONSET = 21,
  SW_OUT_OF_ORDER_ROW = 22,
  SW_INSUFFICIENT_STRATUM = 23,
  SW_EMPTY_POPULATION = 24,
  SW_NO_SEQUENCES = 25,
  SW_BAD_SPEC = 26,
  SW_BAD_CONFIG = 27,
  SW_INTERNAL = 99
} sw_status;

/* Stream events returned by sw_stream_push. */
typedef enum sw_event { SW_EVENT_NONE = 0, SW_EVENT_ALERT = 1, SW_EVENT_STILL_MALICIOUS = 2 } sw_event;

typedef struct sw_config sw_config;
typedef struct sw_model sw_model;
typedef struct sw_stream sw_stream;

SW_API const char* sw_version(void);
/* Stable identifier of a status, e.g. "BadConfig". */
SW_API const char* sw_status_name(int status);
/* Message of the last failure on the calling thread; empty after a success. */
SW_API const char* sw_last_error(void);
/* Releases strings returned through char** out-parameters. */
SW_API void sw_string_free(char* s);

/* Configuration: defaults, then files and overrides in call order. Unknown keys fail at once;
   values are checked together when the configuration is used (SW_BAD_CONFIG). */
SW_API int sw_config_new(sw_config** out);
SW_API void sw_config_free(sw_config* cfg);
SW_API int sw_config_apply_file(sw_config* cfg, const char* path);
SW_API int sw_config_apply_json(sw_config* cfg, const char* json_text);
/* "dotted.key=value"; value parsed as JSON, else taken as a string. */
SW_API int sw_config_set(sw_config* cfg, const char* assignment);
/* Effective configuration as JSON. */
SW_API int sw_config_render(const sw_config* cfg, char** out_json);
/* Effective value of one dotted key as JSON, e.g. "detector.sample_period_s" -> "0.5". */
SW_API int sw_config_get(const sw_config* cfg, const char* key, char** out_json);
/* Tab-separated "key<TAB>default<TAB>help" lines for every accepted key. */
SW_API int sw_config_describe(char** out_text);

/* Corpus and data commands. */
SW_API int sw_generate(const sw_config* cfg, const char* dir, size_t* out_files);
/* Checks one trace file; writes a JSON array of violations (empty when valid). */
SW_API int sw_validate_trace(const char* path, char** out_json);
/* Checks a manifest against the files on disk; writes a JSON array of problems. */
SW_API int sw_validate_manifest(const char* manifest_path, char** out_json);
/* Builds a manifest for every trace CSV in dir from the filename convention; unreadable
   files are listed as skipped. */
SW_API int sw_index_corpus(const char* dir, const char* manifest_out, size_t* out_entries, size_t* out_skipped);
/* manifest_in may also be a directory, which is indexed first. */
SW_API int sw_split(const sw_config* cfg, const char* manifest_in, const char* manifest_out);

/* Training and evaluation. */
SW_API int sw_train(const sw_config* cfg, const char* manifest, const char* artifact_out, char** out_log);
SW_API int sw_evaluate(const sw_config* cfg, const char* manifest, const char* const* artifacts, size_t count,
                       const char* out_dir, char** out_summary);
/* kind: "threshold" | "encoding" | "seqlen"; artifact is only read by the threshold sweep. */
SW_API int sw_sweep(const sw_config* cfg, const char* kind, const char* manifest, const char* artifact,
                    const char* out_dir, char** out_summary);

/* Model artifacts. */
SW_API int sw_model_load(const char* path, sw_model** out);
SW_API void sw_model_free(sw_model* model);
SW_API int sw_model_inspect(const sw_model* model, int as_json, char** out_text);
SW_API int sw_model_parameter_count(const sw_model* model, size_t* out);
SW_API int sw_model_input_dim(const sw_model* model, size_t* out);
/* Per-row (mlp, conv) or per-sequence (rnn) probabilities for a trace file. With
   out == NULL only *out_count is set. */
SW_API int sw_model_predict_file(const sw_model* model, const char* trace_path, double* out, size_t capacity,
                                 size_t* out_count);

/* Streaming detection. The stream keeps its own reference to the model. */
SW_API int sw_stream_new(const sw_model* model, const sw_config* cfg, sw_stream** out);
SW_API void sw_stream_free(sw_stream* stream);
SW_API int sw_stream_push(sw_stream* stream, double t, const double* row, size_t width, int* out_event,
                          double* out_probability);
/* rows consumed, whether an alert has fired, and its row (-1 when none). */
SW_API int sw_stream_status(const sw_stream* stream, size_t* out_rows, int* out_alerted, int64_t* out_alert_row);
SW_API int sw_stream_save(const sw_stream* stream, char** out_json);
SW_API int sw_stream_restore(sw_stream* stream, const char* json_text);
/* One JSON line describing an event at time t for the stream's latest row. */
SW_API int sw_stream_event_json(const sw_stream* stream, double t, int event, char** out_json);

#ifdef __cplusplus
}
#endif

#endif /* SIDEWATCH_SIDEWATCH_H */
