// SPDX-License-Identifier: Apache-2.0
// sidewatch: command-line front end over the C API.
#include "sidewatch/sidewatch.h"

#include <CLI11.hpp>

#include <atomic>
#include <chrono>
#include <csignal>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

namespace fs = std::filesystem;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitAlert = 3;

std::atomic<bool> g_interrupted{false};

void on_signal(int) { g_interrupted = true; }

// Raised for a failed C API call; carries the process exit status.
struct Failure {
  int exit_code;
};

int exit_for(int status) {
  return status == SW_BAD_CONFIG || status == SW_INVALID_ARGUMENT ? kExitUsage : kExitData;
}

void check(int status) {
  if (status == SW_OK) return;
  std::cerr << "sidewatch: " << sw_last_error() << "\n";
  throw Failure{exit_for(status)};
}

std::string take(char* s) {
  std::string out = s ? s : "";
  sw_string_free(s);
  return out;
}

struct ConfigDeleter {
  void operator()(sw_config* c) const { sw_config_free(c); }
};
struct ModelDeleter {
  void operator()(sw_model* m) const { sw_model_free(m); }
};
struct StreamDeleter {
  void operator()(sw_stream* s) const { sw_stream_free(s); }
};
using ConfigPtr = std::unique_ptr<sw_config, ConfigDeleter>;
using ModelPtr = std::unique_ptr<sw_model, ModelDeleter>;
using StreamPtr = std::unique_ptr<sw_stream, StreamDeleter>;

// Options shared by every sub-command.
struct Common {
  std::vector<std::string> config_files;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::string family;
};

ConfigPtr build_config(const Common& c) {
  sw_config* raw = nullptr;
  check(sw_config_new(&raw));
  ConfigPtr cfg(raw);
  for (const auto& f : c.config_files) check(sw_config_apply_file(cfg.get(), f.c_str()));
  for (const auto& o : c.overrides) check(sw_config_set(cfg.get(), o.c_str()));
  if (c.seed) check(sw_config_set(cfg.get(), ("seed=" + std::to_string(*c.seed)).c_str()));
  if (!c.family.empty()) check(sw_config_set(cfg.get(), ("model.family=\"" + c.family + "\"").c_str()));
  return cfg;
}

std::string render(const sw_config* cfg) {
  char* out = nullptr;
  check(sw_config_render(cfg, &out));
  return take(out);
}

// Effective value of a dotted key; JSON strings are unquoted.
std::string config_field(const sw_config* cfg, const std::string& key) {
  char* raw = nullptr;
  check(sw_config_get(cfg, key.c_str(), &raw));
  std::string v = take(raw);
  if (v.size() >= 2 && v.front() == '"') v = v.substr(1, v.size() - 2);
  return v;
}

fs::path run_dir(const sw_config* cfg, const std::string& explicit_dir) {
  if (!explicit_dir.empty()) return explicit_dir;
  const std::string from_config = config_field(cfg, "output_dir");
  if (!from_config.empty()) return from_config;
  const std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  char stamp[32];
  std::strftime(stamp, sizeof(stamp), "%Y%m%dT%H%M%S", &tm);
  return fs::path("runs") / (std::string(stamp) + "_seed" + config_field(cfg, "seed"));
}

void write_text(const fs::path& path, const std::string& text) {
  std::error_code ec;
  if (path.has_parent_path()) fs::create_directories(path.parent_path(), ec);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out || !(out << text)) {
    std::cerr << "sidewatch: cannot write " << path.string() << "\n";
    throw Failure{kExitData};
  }
}

void write_effective_config(const sw_config* cfg, const fs::path& dir) {
  write_text(dir / "effective_config.json", render(cfg));
}

std::string keys_footer() {
  char* raw = nullptr;
  check(sw_config_describe(&raw));
  std::istringstream in(take(raw));
  std::string line, out = "\nConfiguration keys (set with --config FILE or --set key=value; defaults shown):\n";
  while (std::getline(in, line)) {
    const auto a = line.find('\t');
    const auto b = line.find('\t', a + 1);
    std::string key = line.substr(0, a);
    out += "  " + key + std::string(key.size() < 30 ? 30 - key.size() : 1, ' ') + "= " + line.substr(a + 1, b - a - 1) +
           "\n      " + line.substr(b + 1) + "\n";
  }
  out += "\nExit status: 0 success or benign stream, 1 usage error, 2 data error, 3 stream ended alerted.\n";
  return out;
}

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("-c,--config", c.config_files, "JSON config file (comments allowed); repeatable, later files win");
  cmd->add_option("-s,--set", c.overrides, "override one key: dotted.key=value; repeatable, applied after files");
  cmd->add_option("--seed", c.seed, "shorthand for --set seed=N");
}

// Streaming CSV reader for detect: header first, then one row per line.
class RowSource {
 public:
  RowSource(const std::string& path, bool follow) : follow_(follow) {
    if (path == "-") {
      in_ = &std::cin;
    } else {
      file_.open(path);
      if (!file_) {
        std::cerr << "sidewatch: cannot read " << path << "\n";
        throw Failure{kExitData};
      }
      in_ = &file_;
    }
  }

  // Next complete line, waiting for more data in follow mode. False at the end.
  bool next_line(std::string& line) {
    std::string partial;
    while (true) {
      if (std::getline(*in_, line)) {
        if (in_->eof() && follow_ && in_ != &std::cin) {
          // Incomplete last line: keep it and wait for the rest.
          partial += line;
        } else {
          line = partial + line;
          if (!line.empty() && line.back() == '\r') line.pop_back();
          return true;
        }
      }
      if (!follow_ || g_interrupted) return false;
      in_->clear();
      std::this_thread::sleep_for(std::chrono::milliseconds(200));
    }
  }

 private:
  bool follow_;
  std::ifstream file_;
  std::istream* in_ = nullptr;
};

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\"");
  const auto e = s.find_last_not_of(" \t\"");
  return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
}

struct DetectOptions {
  std::string artifact;
  std::string source = "-";
  bool follow = false;
  std::string checkpoint;
  bool resume = false;
  std::optional<std::size_t> stop_after;
  bool alerts_only = false;
  std::string time_column = "time_s";
  std::string label_column = "label";
};

int run_detect(const Common& common, const DetectOptions& opt) {
  auto cfg = build_config(common);
  sw_model* raw_model = nullptr;
  check(sw_model_load(opt.artifact.c_str(), &raw_model));
  ModelPtr model(raw_model);
  std::size_t width = 0;
  check(sw_model_input_dim(model.get(), &width));
  sw_stream* raw_stream = nullptr;
  check(sw_stream_new(model.get(), cfg.get(), &raw_stream));
  StreamPtr stream(raw_stream);

  std::size_t skip = 0;
  if (opt.resume) {
    if (opt.checkpoint.empty()) {
      std::cerr << "sidewatch: --resume needs --checkpoint\n";
      return kExitUsage;
    }
    std::ifstream in(opt.checkpoint, std::ios::binary);
    if (in) {
      std::stringstream ss;
      ss << in.rdbuf();
      check(sw_stream_restore(stream.get(), ss.str().c_str()));
      check(sw_stream_status(stream.get(), &skip, nullptr, nullptr));
    }
  }

  auto save = [&] {
    if (opt.checkpoint.empty()) return;
    char* snap = nullptr;
    check(sw_stream_save(stream.get(), &snap));
    write_text(opt.checkpoint, take(snap));
  };

  RowSource source(opt.source, opt.follow);
  std::string line;
  if (!source.next_line(line)) {
    std::cerr << "sidewatch: empty input\n";
    return kExitData;
  }
  const auto header = split_csv(line);
  std::optional<std::size_t> time_col;
  std::vector<std::size_t> feature_cols;
  for (std::size_t i = 0; i < header.size(); ++i) {
    const std::string name = trim(header[i]);
    if (name == opt.time_column)
      time_col = i;
    else if (name != opt.label_column)
      feature_cols.push_back(i);
  }
  if (feature_cols.size() != width) {
    std::cerr << "sidewatch: input has " << feature_cols.size() << " feature columns, model expects " << width << "\n";
    return kExitData;
  }

  std::vector<double> row(width, 0.0);
  bool seen_any = false;
  std::size_t data_rows = 0, pushed = 0;
  // Untimed inputs are spaced by the configured detector period.
  const double period = std::stod(config_field(cfg.get(), "detector.sample_period_s"));
  while (!g_interrupted && (!opt.stop_after || pushed < *opt.stop_after) && source.next_line(line)) {
    if (trim(line).empty()) continue;
    const std::size_t index = data_rows++;
    if (index < skip) continue;
    const auto cells = split_csv(line);
    for (std::size_t k = 0; k < width; ++k) {
      const std::size_t col = feature_cols[k];
      const std::string cell = col < cells.size() ? trim(cells[col]) : std::string();
      if (cell.empty()) {
        if (!seen_any) {
          std::cerr << "sidewatch: row " << index << " has an empty cell before any value was seen\n";
          save();
          return kExitData;
        }
        continue;  // keep the previous value
      }
      try {
        row[k] = std::stod(cell);
      } catch (const std::exception&) {
        std::cerr << "sidewatch: row " << index << ": bad cell '" << cell << "'\n";
        save();
        return kExitData;
      }
    }
    seen_any = true;
    double t = static_cast<double>(index) * period;
    if (time_col && *time_col < cells.size() && !trim(cells[*time_col]).empty()) t = std::stod(cells[*time_col]);
    int event = SW_EVENT_NONE;
    double prob = 0.0;
    const int status = sw_stream_push(stream.get(), t, row.data(), width, &event, &prob);
    if (status != SW_OK) {
      std::cerr << "sidewatch: " << sw_last_error() << "\n";
      save();
      return exit_for(status);
    }
    ++pushed;
    if (event == SW_EVENT_ALERT || (event == SW_EVENT_STILL_MALICIOUS && !opt.alerts_only)) {
      char* ev = nullptr;
      check(sw_stream_event_json(stream.get(), t, event, &ev));
      std::cout << take(ev) << "\n" << std::flush;
    }
  }
  save();
  int alerted = 0;
  check(sw_stream_status(stream.get(), nullptr, &alerted, nullptr));
  return alerted ? kExitAlert : kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"sidewatch: side-channel malware detection from hardware sensor telemetry"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(sw_version()));

  std::string footer;
  try {
    footer = keys_footer();
  } catch (const Failure& f) {
    return f.exit_code;
  }
  app.footer(footer);

  Common common;

  auto* gen = app.add_subcommand("generate", "write a synthetic corpus (trace CSVs + manifest.json)");
  std::string gen_dir;
  gen->add_option("dir", gen_dir, "output directory (default: run directory)");
  add_common(gen, common);

  auto* val = app.add_subcommand("validate", "check a trace CSV, a manifest, or a directory of traces");
  std::string val_path;
  val->add_option("path", val_path, "trace .csv, manifest .json, or corpus directory")->required();
  add_common(val, common);

  auto* spl = app.add_subcommand("split", "tag a manifest (or corpus directory) with a stratified train/test split");
  std::string spl_in, spl_out;
  spl->add_option("manifest", spl_in, "manifest.json or corpus directory")->required();
  spl->add_option("-o,--out", spl_out, "output manifest (default: overwrite input, or <dir>/manifest.json)");
  add_common(spl, common);

  auto* trn = app.add_subcommand("train", "train the configured model on the train-tagged traces");
  std::string trn_manifest, trn_out;
  trn->add_option("manifest", trn_manifest, "split manifest")->required();
  trn->add_option("-o,--out", trn_out, "artifact path (default: <run dir>/<family>.swm)");
  trn->add_option("--family", common.family, "shorthand for --set model.family=NAME");
  add_common(trn, common);

  auto* evl = app.add_subcommand("eval", "evaluate artifacts on the test-tagged traces and write the report");
  std::string evl_manifest, evl_out;
  std::vector<std::string> evl_models;
  evl->add_option("manifest", evl_manifest, "split manifest")->required();
  evl->add_option("models", evl_models, "model artifacts")->required();
  evl->add_option("-o,--out", evl_out, "report directory (default: run directory)");
  add_common(evl, common);

  auto* swp = app.add_subcommand("sweep", "threshold, encoding-dimension or sequence-length sweep");
  std::string swp_kind, swp_manifest, swp_model, swp_out;
  swp->add_option("kind", swp_kind, "threshold | encoding | seqlen")
      ->required()
      ->check(CLI::IsMember({"threshold", "encoding", "seqlen"}));
  swp->add_option("manifest", swp_manifest, "split manifest")->required();
  swp->add_option("-m,--model", swp_model, "trained artifact (threshold sweep)");
  swp->add_option("-o,--out", swp_out, "report directory (default: run directory)");
  add_common(swp, common);

  auto* det = app.add_subcommand("detect", "stream telemetry rows through a model and report alerts");
  DetectOptions dopt;
  det->add_option("model", dopt.artifact, "trained artifact")->required();
  det->add_option("source", dopt.source, "telemetry CSV with a header row; - reads stdin")->capture_default_str();
  det->add_flag("-f,--follow", dopt.follow, "keep waiting for rows appended to the file");
  det->add_option("--checkpoint", dopt.checkpoint, "state file written when the stream stops");
  det->add_flag("--resume", dopt.resume, "continue from --checkpoint, skipping rows it already consumed");
  det->add_option("--stop-after", dopt.stop_after, "stop after this many rows in this run");
  det->add_flag("--alerts-only", dopt.alerts_only, "print only alert events, not still_malicious rows");
  det->add_option("--time-column", dopt.time_column, "time column name")->capture_default_str();
  det->add_option("--label-column", dopt.label_column, "column ignored as a label")->capture_default_str();
  add_common(det, common);

  auto* ins = app.add_subcommand("inspect", "describe a model artifact");
  std::string ins_model;
  bool ins_json = false;
  ins->add_option("model", ins_model, "artifact")->required();
  ins->add_flag("--json", ins_json, "machine-readable output");

  for (auto* sub : app.get_subcommands({})) sub->footer(footer);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  // No SA_RESTART: a blocked read on stdin returns so the stream can stop and checkpoint.
  struct sigaction sa {};
  sa.sa_handler = on_signal;
  sigemptyset(&sa.sa_mask);
  sigaction(SIGINT, &sa, nullptr);
  sigaction(SIGTERM, &sa, nullptr);

  try {
    if (*gen) {
      auto cfg = build_config(common);
      const fs::path dir = gen_dir.empty() ? run_dir(cfg.get(), "") : fs::path(gen_dir);
      std::size_t n = 0;
      check(sw_generate(cfg.get(), dir.string().c_str(), &n));
      write_effective_config(cfg.get(), dir);
      std::cout << "generated " << n << " traces in " << dir.string() << "\n";
      return kExitOk;
    }
    if (*val) {
      const fs::path p = val_path;
      char* out = nullptr;
      if (fs::is_directory(p)) {
        const fs::path manifest = p / "manifest.json";
        std::size_t entries = 0, skipped = 0;
        if (!fs::exists(manifest)) check(sw_index_corpus(p.string().c_str(), manifest.string().c_str(), &entries, &skipped));
        check(sw_validate_manifest(manifest.string().c_str(), &out));
      } else if (p.extension() == ".json") {
        check(sw_validate_manifest(p.string().c_str(), &out));
      } else {
        check(sw_validate_trace(p.string().c_str(), &out));
      }
      const std::string problems = take(out);
      std::cout << problems << "\n";
      return problems == "[]" ? kExitOk : kExitData;
    }
    if (*spl) {
      auto cfg = build_config(common);
      std::string out = spl_out;
      if (out.empty()) out = fs::is_directory(spl_in) ? (fs::path(spl_in) / "manifest.json").string() : spl_in;
      check(sw_split(cfg.get(), spl_in.c_str(), out.c_str()));
      std::cout << "wrote " << out << "\n";
      return kExitOk;
    }
    if (*trn) {
      auto cfg = build_config(common);
      fs::path artifact = trn_out;
      if (artifact.empty()) artifact = run_dir(cfg.get(), "") / (config_field(cfg.get(), "model.family") + ".swm");
      if (artifact.has_parent_path()) fs::create_directories(artifact.parent_path());
      char* log = nullptr;
      check(sw_train(cfg.get(), trn_manifest.c_str(), artifact.string().c_str(), &log));
      const fs::path dir = artifact.has_parent_path() ? artifact.parent_path() : fs::path(".");
      write_text(fs::path(artifact).replace_extension(".log.tsv"), take(log));
      write_effective_config(cfg.get(), dir);
      std::cout << "wrote " << artifact.string() << "\n";
      return kExitOk;
    }
    if (*evl) {
      auto cfg = build_config(common);
      const fs::path dir = run_dir(cfg.get(), evl_out);
      std::vector<const char*> paths;
      for (const auto& m : evl_models) paths.push_back(m.c_str());
      char* summary = nullptr;
      check(sw_evaluate(cfg.get(), evl_manifest.c_str(), paths.data(), paths.size(), dir.string().c_str(), &summary));
      write_effective_config(cfg.get(), dir);
      std::cout << take(summary);
      return kExitOk;
    }
    if (*swp) {
      auto cfg = build_config(common);
      const fs::path dir = run_dir(cfg.get(), swp_out);
      char* summary = nullptr;
      check(sw_sweep(cfg.get(), swp_kind.c_str(), swp_manifest.c_str(), swp_model.empty() ? nullptr : swp_model.c_str(),
                     dir.string().c_str(), &summary));
      write_effective_config(cfg.get(), dir);
      std::cout << take(summary);
      return kExitOk;
    }
    if (*det) return run_detect(common, dopt);
    if (*ins) {
      sw_model* raw = nullptr;
      check(sw_model_load(ins_model.c_str(), &raw));
      ModelPtr model(raw);
      char* text = nullptr;
      check(sw_model_inspect(model.get(), ins_json ? 1 : 0, &text));
      std::cout << take(text);
      return kExitOk;
    }
  } catch (const Failure& f) {
    return f.exit_code;
  }
  return kExitUsage;
}
