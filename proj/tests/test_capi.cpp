// SPDX-License-Identifier: Apache-2.0
// Exercises the shared library through the C header only.
#include "sidewatch/sidewatch.h"

#include <doctest.h>
#include <json.hpp>

#include <unistd.h>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string take(char* s) {
  std::string out = s ? s : "";
  sw_string_free(s);
  return out;
}

struct Scratch {
  fs::path path;
  explicit Scratch(const std::string& tag) {
    path = fs::temp_directory_path() / ("sidewatch_capi_" + tag + "_" + std::to_string(::getpid()));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~Scratch() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
};

sw_config* small_config() {
  sw_config* cfg = nullptr;
  REQUIRE(sw_config_new(&cfg) == SW_OK);
  const char* overrides[] = {
      "seed=7",
      "corpus.features=8",
      "corpus.duration_s=120",
      "corpus.onsets=[30]",
      "corpus.difficulty=3",
      R"(corpus.counts={"office":3,"os-only":3,"worm":3,"ransomware":3})",
      "split.train_benign=4",
      "split.train_malicious=4",
      "split.test_benign=2",
      "split.test_malicious=2",
      "model.family=mlp",
      "train.max_epochs=60",
  };
  for (const char* o : overrides) REQUIRE_MESSAGE(sw_config_set(cfg, o) == SW_OK, o, " ", sw_last_error());
  return cfg;
}

}  // namespace

TEST_CASE("status codes, names and argument checks") {
  CHECK(std::string(sw_version()).size() > 0);
  CHECK(std::string(sw_status_name(SW_OK)) == "Ok");
  CHECK(std::string(sw_status_name(SW_BAD_CONFIG)) == "BadConfig");
  CHECK(std::string(sw_status_name(SW_SHAPE_MISMATCH)) == "ShapeMismatch");
  CHECK(std::string(sw_status_name(12345)) == "Unknown");

  CHECK(sw_config_new(nullptr) == SW_INVALID_ARGUMENT);
  CHECK(std::string(sw_last_error()).find("out") != std::string::npos);
  sw_model* model = nullptr;
  CHECK(sw_model_load("/nonexistent/model.swm", &model) == SW_IO_FAILURE);
  CHECK(model == nullptr);
  sw_config* cfg = nullptr;
  REQUIRE(sw_config_new(&cfg) == SW_OK);
  CHECK(std::string(sw_last_error()).empty());
  sw_config_free(cfg);
}

TEST_CASE("config handle: set, get, render, describe") {
  sw_config* cfg = nullptr;
  REQUIRE(sw_config_new(&cfg) == SW_OK);
  char* out = nullptr;
  REQUIRE(sw_config_get(cfg, "detector.consec_threshold", &out) == SW_OK);
  CHECK(take(out) == "50");
  REQUIRE(sw_config_set(cfg, "detector.consec_threshold=12") == SW_OK);
  REQUIRE(sw_config_get(cfg, "detector.consec_threshold", &out) == SW_OK);
  CHECK(take(out) == "12");
  REQUIRE(sw_config_apply_json(cfg, R"({"model": {"family": "rnn_gru"}})") == SW_OK);
  REQUIRE(sw_config_get(cfg, "model.family", &out) == SW_OK);
  CHECK(take(out) == "\"rnn_gru\"");

  CHECK(sw_config_set(cfg, "detector.no_such_key=1") == SW_BAD_CONFIG);
  CHECK(sw_config_apply_file(cfg, "/nonexistent/config.json") != SW_OK);
  CHECK(sw_config_get(cfg, "nope", &out) == SW_BAD_CONFIG);

  // Values are checked when the configuration is used.
  {
    sw_config* layered = nullptr;
    REQUIRE(sw_config_new(&layered) == SW_OK);
    REQUIRE(sw_config_set(layered, "model.family=\"cnn\"") == SW_OK);
    CHECK(sw_config_get(layered, "model.family", &out) == SW_BAD_CONFIG);
    CHECK(std::string(sw_last_error()).find("cnn") != std::string::npos);
    sw_config_free(layered);
  }

  REQUIRE(sw_config_render(cfg, &out) == SW_OK);
  const json rendered = json::parse(take(out));
  CHECK(rendered["detector"]["consec_threshold"] == 12);

  REQUIRE(sw_config_describe(&out) == SW_OK);
  std::istringstream lines(take(out));
  std::string line;
  std::size_t n = 0;
  while (std::getline(lines, line)) {
    ++n;
    const auto key = line.substr(0, line.find('\t'));
    std::string ptr = "/" + key;
    for (auto& c : ptr)
      if (c == '.') c = '/';
    CHECK_MESSAGE(rendered.contains(json::json_pointer(ptr)), key);
  }
  CHECK(n > 40);
  sw_config_free(cfg);
}

TEST_CASE("corpus to streaming detection through the C API") {
  Scratch dir("flow");
  sw_config* cfg = small_config();
  const auto corpus = dir.path / "corpus";
  size_t files = 0;
  REQUIRE_MESSAGE(sw_generate(cfg, corpus.string().c_str(), &files) == SW_OK, sw_last_error());
  CHECK(files == 12);

  char* out = nullptr;
  const auto manifest = corpus / "manifest.json";
  REQUIRE(sw_validate_manifest(manifest.string().c_str(), &out) == SW_OK);
  CHECK(take(out) == "[]");

  const auto split = dir.path / "split.json";
  REQUIRE_MESSAGE(sw_split(cfg, corpus.string().c_str(), split.string().c_str()) == SW_OK, sw_last_error());
  std::ifstream in(split);
  const json sj = json::parse(in);
  std::size_t train = 0, test = 0;
  std::string malware_test;
  for (const auto& e : sj["entries"]) {
    if (e["split"] == "train") ++train;
    if (e["split"] == "test") {
      ++test;
      if (!e["onset_s"].is_null() && malware_test.empty()) malware_test = e["path"];
    }
  }
  CHECK(train == 8);
  CHECK(test == 4);
  REQUIRE(!malware_test.empty());

  const auto artifact = dir.path / "mlp.swm";
  REQUIRE_MESSAGE(sw_train(cfg, split.string().c_str(), artifact.string().c_str(), &out) == SW_OK, sw_last_error());
  CHECK(take(out).find("epoch") != std::string::npos);

  const char* artifacts[] = {artifact.c_str()};
  REQUIRE(sw_evaluate(cfg, split.string().c_str(), artifacts, 1, (dir.path / "report").c_str(), &out) == SW_OK);
  CHECK(take(out).find("mlp") != std::string::npos);
  CHECK(fs::exists(dir.path / "report" / "report.json"));

  sw_model* model = nullptr;
  REQUIRE(sw_model_load(artifact.c_str(), &model) == SW_OK);
  size_t params = 0, width = 0;
  REQUIRE(sw_model_parameter_count(model, &params) == SW_OK);
  REQUIRE(sw_model_input_dim(model, &width) == SW_OK);
  CHECK(width == 8);
  CHECK(params == 8 * 100 + 100 + 100 + 1);
  REQUIRE(sw_model_inspect(model, 1, &out) == SW_OK);
  CHECK(json::parse(take(out))["parameters"] == params);

  // Batch probabilities and the first run of 50 rows above the cutoff.
  const auto trace = (dir.path / malware_test).lexically_normal();
  size_t count = 0;
  REQUIRE(sw_model_predict_file(model, trace.c_str(), nullptr, 0, &count) == SW_OK);
  CHECK(count == 240);
  std::vector<double> probs(count);
  CHECK(sw_model_predict_file(model, trace.c_str(), probs.data(), 10, &count) == SW_INVALID_ARGUMENT);
  REQUIRE(sw_model_predict_file(model, trace.c_str(), probs.data(), probs.size(), &count) == SW_OK);
  long expected_alert = -1;
  for (std::size_t i = 0, run = 0; i < probs.size(); ++i) {
    run = probs[i] > 0.5 ? run + 1 : 0;
    if (run == 50) {
      expected_alert = static_cast<long>(i);
      break;
    }
  }
  REQUIRE(expected_alert >= 60);

  // Stream the same rows, checkpointing halfway into a second stream.
  std::ifstream csv(trace);
  std::string line;
  std::getline(csv, line);
  std::vector<std::vector<double>> rows;
  std::vector<double> times;
  while (std::getline(csv, line)) {
    std::stringstream ss(line);
    std::string cell;
    std::vector<double> cells;
    while (std::getline(ss, cell, ',')) cells.push_back(std::stod(cell));
    times.push_back(cells.front());
    rows.emplace_back(cells.begin() + 1, cells.begin() + 9);
  }
  REQUIRE(rows.size() == 240);

  sw_stream* a = nullptr;
  REQUIRE(sw_stream_new(model, cfg, &a) == SW_OK);
  int event = 0;
  double prob = 0;
  CHECK(sw_stream_push(a, 0.0, rows[0].data(), 7, &event, &prob) == SW_SHAPE_MISMATCH);
  long alert_at = -1;
  for (std::size_t i = 0; i < 100; ++i) {
    REQUIRE(sw_stream_push(a, times[i], rows[i].data(), 8, &event, &prob) == SW_OK);
    CHECK(prob == doctest::Approx(probs[i]).epsilon(1e-9));
    if (event == SW_EVENT_ALERT) alert_at = static_cast<long>(i);
  }
  REQUIRE(sw_stream_save(a, &out) == SW_OK);
  const std::string snapshot = take(out);
  sw_stream_free(a);

  sw_stream* b = nullptr;
  REQUIRE(sw_stream_new(model, cfg, &b) == SW_OK);
  REQUIRE(sw_stream_restore(b, snapshot.c_str()) == SW_OK);
  size_t consumed = 0;
  REQUIRE(sw_stream_status(b, &consumed, nullptr, nullptr) == SW_OK);
  CHECK(consumed == 100);
  std::string first_alert;
  for (std::size_t i = 100; i < rows.size(); ++i) {
    REQUIRE(sw_stream_push(b, times[i], rows[i].data(), 8, &event, &prob) == SW_OK);
    if (event == SW_EVENT_ALERT) {
      alert_at = static_cast<long>(i);
      REQUIRE(sw_stream_event_json(b, times[i], event, &out) == SW_OK);
      first_alert = take(out);
    }
  }
  CHECK(alert_at == expected_alert);
  int alerted = 0;
  int64_t alert_row = 0;
  REQUIRE(sw_stream_status(b, nullptr, &alerted, &alert_row) == SW_OK);
  CHECK(alerted == 1);
  CHECK(alert_row == expected_alert);
  const json ev = json::parse(first_alert);
  CHECK(ev["event"] == "alert");
  CHECK(ev["row"] == expected_alert);
  CHECK(sw_stream_restore(b, "{\"format\": \"other\"}") != SW_OK);
  sw_stream_free(b);
  sw_model_free(model);
  sw_config_free(cfg);
}

TEST_CASE("trace validation reports structural failures") {
  Scratch dir("validate");
  const auto good = dir.path / "idle01_Win7SP1_hw1_benign.csv";
  std::ofstream(good) << "time_s,a,b,label\n0,1,2,0\n0.5,1,2,0\n1.0,1,2,0\n";
  char* out = nullptr;
  REQUIRE_MESSAGE(sw_validate_trace(good.c_str(), &out) == SW_OK, sw_last_error());
  CHECK(json::parse(take(out)).is_array());

  const auto ragged = dir.path / "idle02_Win7SP1_hw1_benign.csv";
  std::ofstream(ragged) << "time_s,a,b,label\n0,1,2,0\n0.5,1,0\n";
  CHECK(sw_validate_trace(ragged.c_str(), &out) == SW_RAGGED_ROW);
  CHECK(std::string(sw_last_error()).size() > 0);
}
