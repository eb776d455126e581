// SPDX-License-Identifier: Apache-2.0
#include "sidewatch/error.hpp"
#include "sidewatch/synthgen.hpp"
#include "test_support.hpp"

#include <doctest.h>

#include <fstream>
#include <map>
#include <sstream>

using namespace sidewatch;
using namespace sidewatch::synth;
using sidewatch::testing::TempDir;

namespace {

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

CorpusSpec small_spec() {
  CorpusSpec s;
  s.counts = {{"office", 2}, {"benchmark", 1}, {"worm", 2}, {"rootkit", 1}};
  s.features = 24;
  s.duration_s = 240.0;
  s.onsets = {60.0, 90.0};
  return s;
}

// Sample autocorrelation of x at the given lag.
double acf(const std::vector<double>& x, std::size_t lag) {
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= static_cast<double>(x.size());
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    den += (x[i] - mean) * (x[i] - mean);
    if (i + lag < x.size()) num += (x[i] - mean) * (x[i + lag] - mean);
  }
  return num / den;
}

}  // namespace

TEST_CASE("default corpus composition") {
  const CorpusSpec spec = default_corpus_spec();
  std::size_t benign = 0, malware = 0;
  for (const auto& c : spec.counts) (telemetry::is_malware_category(c.category) ? malware : benign) += c.count;
  CHECK(benign == 28);
  CHECK(malware == 29);
  CHECK(spec.rows() == 960);
  CHECK(spec.features == 132);

  const auto layout = channel_layout(132);
  REQUIRE(layout.size() == 132);
  CHECK(layout[0].name == "CPU Core #1 Clock [MHz]");
  CHECK(layout[12].name == "CPU Core #2 Clock [MHz]");
  CHECK(layout[131].group == 11);
}

TEST_CASE("generated corpus files, manifest and determinism") {
  TempDir a("synth_a"), b("synth_b");
  const CorpusSpec spec = small_spec();
  const auto ma = generate_corpus(spec, a.path());
  const auto mb = generate_corpus(spec, b.path());
  REQUIRE(ma.entries.size() == 6);
  for (std::size_t i = 0; i < ma.entries.size(); ++i) {
    CHECK(ma.entries[i].path == mb.entries[i].path);
    CHECK(slurp(a.path() / ma.entries[i].path) == slurp(b.path() / mb.entries[i].path));
    CHECK(ma.entries[i].rows == spec.rows());
  }
  CHECK(slurp(a.path() / "manifest.json") == slurp(b.path() / "manifest.json"));

  // The directory scan agrees with the written manifest and every file validates.
  const auto scanned = telemetry::build_manifest(a.path());
  CHECK(scanned.skipped.empty());
  REQUIRE(scanned.entries.size() == ma.entries.size());
  for (std::size_t i = 0; i < ma.entries.size(); ++i) {
    CHECK(scanned.entries[i].path == ma.entries[i].path);
    CHECK(scanned.entries[i].meta == ma.entries[i].meta);
    const auto t = telemetry::parse_trace_csv(a.path() / ma.entries[i].path);
    CHECK(telemetry::validate_trace(t).empty());
  }
  CHECK(telemetry::validate_manifest(ma).empty());

  CorpusSpec other = spec;
  other.seed = 2;
  const auto tb = generate_traces(other);
  const auto ta = generate_traces(spec);
  CHECK_FALSE(ta[0].features.isApprox(tb[0].features));
}

TEST_CASE("onset labels and pre-onset equality") {
  CorpusSpec spec = default_corpus_spec();
  const auto workload = workload_profile("benchmark");
  const auto mal = malware_profile("ransomware", spec.features);
  const auto m = generate_malicious_trace(workload, mal, spec, 77, "cryptlock01", 120.0);
  const auto b = generate_benign_trace(workload, spec, 77);
  REQUIRE(m.rows() == 960);
  CHECK(m.onset_row() == std::optional<std::size_t>(240));
  for (std::size_t i = 0; i < m.rows(); ++i) CHECK(m.labels[i] == (i >= 240 ? 1 : 0));
  CHECK(m.features.topRows(240) == b.features.topRows(240));
  CHECK(m.features.bottomRows(720) != b.features.bottomRows(720));
  CHECK(telemetry::validate_trace(m).empty());

  spec.difficulty = 0.0;
  const auto zero = generate_malicious_trace(workload, mal, spec, 77, "cryptlock01", 120.0);
  const auto base = generate_benign_trace(workload, spec, 77);
  CHECK(zero.features == base.features);
  CHECK(zero.labels == m.labels);
}

TEST_CASE("beacon periodicity shows in the autocorrelation") {
  const CorpusSpec spec = default_corpus_spec();
  const auto mal = malware_profile("spyware", spec.features);
  REQUIRE(mal.effects.size() == 2);
  const auto& beacon = mal.effects[1];
  CHECK(beacon.shape == EffectShape::kPeriodicBurst);
  CHECK(beacon.period_s == 10.0);
  const auto t = generate_malicious_trace(workload_profile("os-only"), mal, spec, 5, "keyspy01", 90.0);
  const auto onset = *t.onset_row();
  std::vector<double> x;
  for (std::size_t i = onset; i < t.rows(); ++i)
    x.push_back(t.features(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(beacon.channels[0])));
  // 10 s at 0.5 s per row: peak at lag 20, trough at half the period.
  double best = -2.0;
  std::size_t best_lag = 0;
  for (std::size_t lag = 12; lag <= 30; ++lag) {
    const double r = acf(x, lag);
    if (r > best) best = r, best_lag = lag;
  }
  CHECK(best_lag == 20);
  CHECK(acf(x, 20) > acf(x, 10) + 0.5);
}

TEST_CASE("oracle separates the classes at difficulty 1") {
  const auto traces = generate_traces(default_corpus_spec());
  REQUIRE(traces.size() == 57);
  std::size_t correct = 0;
  for (const auto& t : traces) correct += oracle_flags(t, default_corpus_spec()) == t.meta.is_malware();
  CHECK(correct == traces.size());

  std::map<std::string, int> hw;
  for (const auto& t : traces) ++hw[t.meta.hardware_id];
  CHECK(hw.size() > 1);
}

TEST_CASE("small feature counts and spec validation") {
  CorpusSpec spec;
  spec.counts = {{"ransomware", 2}, {"office", 2}};
  spec.features = 8;
  spec.difficulty = 3.0;
  for (const auto& t : generate_traces(spec)) {
    CHECK(t.feature_count() == 8);
    CHECK(telemetry::validate_trace(t).empty());
  }
  CHECK(malware_profile("rootkit", 3).core_channels().size() == 3);

  spec.counts.clear();
  CHECK(generate_traces(spec).empty());

  auto bad = [](auto mutate) {
    CorpusSpec s = default_corpus_spec();
    mutate(s);
    try {
      s.validate();
    } catch (const Error& e) {
      return e.code() == ErrorCode::kBadSpec;
    }
    return false;
  };
  CHECK(bad([](CorpusSpec& s) { s.features = 0; }));
  CHECK(bad([](CorpusSpec& s) { s.sample_period_s = 0; }));
  CHECK(bad([](CorpusSpec& s) { s.duration_s = -1; }));
  CHECK(bad([](CorpusSpec& s) { s.onsets.clear(); }));
  CHECK(bad([](CorpusSpec& s) { s.onsets = {600.0}; }));
  CHECK(bad([](CorpusSpec& s) { s.counts.push_back({"keylogger", 1}); }));
  CHECK(bad([](CorpusSpec& s) { s.difficulty = -0.5; }));
  CHECK(bad([](CorpusSpec& s) { s.sample_period_s = 4.0; }));
  CHECK_NOTHROW(default_corpus_spec().validate());
  CHECK_THROWS_AS(malware_profile("adware", 10), Error);
}
