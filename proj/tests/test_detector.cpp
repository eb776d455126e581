// SPDX-License-Identifier: Apache-2.0
#include "sidewatch/detector.hpp"
#include "sidewatch/error.hpp"
#include "test_support.hpp"

#include <doctest.h>

#include <algorithm>

using namespace sidewatch;
using namespace sidewatch::detect;
using sidewatch::testing::make_trace;
using sidewatch::testing::random_matrix;

namespace {

// Brute force: the first start s with labels[s .. s+n-1] all malicious.
std::optional<std::size_t> naive_alert(const std::vector<int>& labels, std::size_t n) {
  for (std::size_t s = 0; s + n <= labels.size(); ++s) {
    bool all = true;
    for (std::size_t k = s; k < s + n; ++k) all = all && labels[k] == 1;
    if (all) return s + n - 1;
  }
  return std::nullopt;
}

DetectorConfig with_threshold(std::size_t n) {
  DetectorConfig c;
  c.consec_threshold = n;
  return c;
}

std::vector<int> random_labels(Rng& rng) {
  std::uniform_int_distribution<int> len(1, 300);
  std::uniform_real_distribution<double> density(0.0, 1.0);
  const double p = density(rng);
  std::bernoulli_distribution bit(p);
  std::vector<int> out(static_cast<std::size_t>(len(rng)));
  for (auto& b : out) b = bit(rng);
  return out;
}

models::ConvSettings tiny_conv() {
  models::ConvSettings s;
  s.filters = 3;
  s.kernel = 4;
  s.dense_units = 4;
  s.branches.raw_window = 16;
  s.branches.down_window = 8;
  s.branches.smooth_short_s = 1.0;
  s.branches.smooth_long_s = 2.5;
  s.branches.down_mid_s = 1.5;
  s.branches.down_long_s = 2.0;
  return s;
}

// Cutoff at the batch median so an untrained model produces both row labels.
DetectorConfig median_cutoff(const std::vector<double>& probs, std::size_t threshold) {
  auto sorted = probs;
  std::sort(sorted.begin(), sorted.end());
  DetectorConfig c;
  c.prob_cutoff = sorted[sorted.size() / 2];
  c.consec_threshold = threshold;
  return c;
}

std::vector<std::pair<std::size_t, StreamEvent>> replay(StreamDetector& d, const telemetry::Trace& t,
                                                        std::size_t from, std::size_t to) {
  std::vector<std::pair<std::size_t, StreamEvent>> events;
  for (std::size_t i = from; i < to; ++i) {
    const auto e = d.push(t.times[i], t.features.row(static_cast<Eigen::Index>(i)));
    if (e != StreamEvent::kNone) events.emplace_back(i, e);
  }
  return events;
}

}  // namespace

TEST_CASE("consecutive-sample rule") {
  std::vector<int> labels(400, 0);
  std::fill(labels.begin() + 100, labels.begin() + 149, 1);
  CHECK_FALSE(classify_labels(labels, with_threshold(50)).malicious);
  std::fill(labels.begin() + 180, labels.begin() + 230, 1);
  const auto v = classify_labels(labels, with_threshold(50));
  CHECK(v.malicious);
  CHECK(*v.alert_row == 229);
  CHECK_THROWS_AS(classify_labels({}, with_threshold(50)), Error);

  std::vector<double> probs{0.5, 0.51, 0.9, 0.2};
  const auto p = classify_file(probs, with_threshold(2));
  CHECK(*p.alert_row == 2);  // 0.5 is not above the cutoff
}

TEST_CASE("classify_file matches a naive scanner and the stream on 10^4 sequences") {
  Rng rng(99);
  std::uniform_int_distribution<std::size_t> thr(1, 60);
  for (int trial = 0; trial < 10000; ++trial) {
    const auto labels = random_labels(rng);
    const auto cfg = with_threshold(thr(rng));
    const auto v = classify_labels(labels, cfg);
    const auto expected = naive_alert(labels, cfg.consec_threshold);
    REQUIRE(v.malicious == expected.has_value());
    if (expected) REQUIRE(*v.alert_row == *expected);

    StreamState s;
    std::optional<std::size_t> streamed;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      const auto e = stream_step(s, labels[i] ? 0.9 : 0.1, cfg, 0.5 * static_cast<double>(i));
      if (e == StreamEvent::kAlert) {
        REQUIRE_FALSE(streamed.has_value());
        streamed = i;
      }
    }
    REQUIRE(streamed == expected);
  }
}

TEST_CASE("flagged set is monotone in the threshold") {
  Rng rng(7);
  for (int trial = 0; trial < 500; ++trial) {
    const auto labels = random_labels(rng);
    bool prev = true;
    for (std::size_t n = 1; n <= 100; ++n) {
      const bool now = classify_labels(labels, with_threshold(n)).malicious;
      CHECK((!now || prev));
      prev = now;
    }
  }
}

TEST_CASE("time to detect") {
  const DetectorConfig cfg;
  std::vector<int> perfect(960, 0);
  std::fill(perfect.begin() + 240, perfect.end(), 1);
  const auto v = classify_labels(perfect, cfg);
  CHECK(time_to_detect(v, 240, cfg) == 25.0);
  DetectionVerdict late{true, 240 + 109, std::nullopt};
  CHECK(time_to_detect(late, 240, cfg) == 55.0);
  try {
    time_to_detect(late, 400, cfg);
    FAIL("expected AlertBeforeOnset");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kAlertBeforeOnset);
  }
}

TEST_CASE("stream semantics") {
  const auto cfg = with_threshold(2);
  StreamState alt;
  for (int i = 0; i < 10000; ++i) CHECK(stream_step(alt, i % 2 ? 0.9 : 0.1, cfg) == StreamEvent::kNone);

  // A single flipped row never alerts once the threshold is at least 2.
  StreamState single;
  for (int i = 0; i < 100; ++i) CHECK(stream_step(single, i == 50 ? 0.99 : 0.01, cfg) == StreamEvent::kNone);

  StreamState latched;
  CHECK(stream_step(latched, 0.9, cfg) == StreamEvent::kNone);
  CHECK(stream_step(latched, 0.9, cfg) == StreamEvent::kAlert);
  bool still = true;
  for (int i = 0; i < 1000000; ++i) still = still && stream_step(latched, 0.0, cfg) == StreamEvent::kStillMalicious;
  CHECK(still);
  stream_reset(latched);
  CHECK(stream_step(latched, 0.0, cfg) == StreamEvent::kNone);
  CHECK(latched.alerts == 1);

  auto loose = cfg;
  loose.latching = false;
  StreamState s;
  std::vector<StreamEvent> events;
  for (double p : {0.9, 0.9, 0.9, 0.1, 0.9, 0.9}) events.push_back(stream_step(s, p, loose));
  CHECK(events == std::vector<StreamEvent>{StreamEvent::kNone, StreamEvent::kAlert, StreamEvent::kStillMalicious,
                                           StreamEvent::kNone, StreamEvent::kNone, StreamEvent::kAlert});
  CHECK(*s.alert_row == 1);
  CHECK(s.alerts == 2);

  StreamState timed;
  stream_step(timed, 0.1, cfg, 1.0);
  try {
    stream_step(timed, 0.1, cfg, 1.0);
    FAIL("expected OutOfOrderRow");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kOutOfOrderRow);
  }
}

TEST_CASE("sequence aggregation") {
  DetectorConfig cfg;
  const auto any = classify_sequences({0.1, 0.7, 0.2, 0.9}, 20, cfg);
  CHECK(any.malicious);
  CHECK(*any.alert_row == 39);
  cfg.aggregation = Aggregation::kMajority;
  CHECK(classify_sequences({0.1, 0.7, 0.2, 0.9}, 20, cfg).malicious);
  CHECK_FALSE(classify_sequences({0.1, 0.7, 0.2, 0.1}, 20, cfg).malicious);
  CHECK_FALSE(classify_sequences({}, 20, cfg).malicious);
}

TEST_CASE("window stream reproduces batch windows bit for bit") {
  Rng rng(5);
  std::uniform_int_distribution<std::size_t> small(1, 12);
  for (int trial = 0; trial < 30; ++trial) {
    features::BranchSizes sizes{small(rng), small(rng), small(rng), small(rng), small(rng) + 3, small(rng) + 1};
    const Matrix x = random_matrix(150, 2, rng);
    const auto bs = features::make_branch_set(x, sizes);
    features::WindowStream ws(sizes, 2);
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      ws.push(x.row(i));
      const auto a = ws.windows();
      const auto b = features::make_row_windows(bs, static_cast<std::size_t>(i));
      for (std::size_t k = 0; k < features::kBranchCount; ++k) REQUIRE(a[k] == b[k]);
    }
  }
}

TEST_CASE("model-backed stream agrees with batch detection and resumes from checkpoints") {
  Rng rng(8);
  const auto trace = make_trace(random_matrix(240, 3, rng), std::vector<int>(240, 0));
  std::vector<std::shared_ptr<models::ModelArtifact>> ms{
      std::make_shared<models::ModelArtifact>(models::build_mlp(3, {{4}}, 1)),
      std::make_shared<models::ModelArtifact>(models::build_conv_multibranch(3, tiny_conv(), 0.5, 2)),
      std::make_shared<models::ModelArtifact>(models::build_rnn(3, models::Family::kRnnGru, {{3}, 12}, 3))};
  for (auto& m : ms) {
    INFO(models::family_name(m->family));
    const auto probe = detect_trace(*m, trace, DetectorConfig{});
    const auto cfg = median_cutoff(probe.probabilities, models::is_rnn_family(m->family) ? 1 : 3);
    const auto batch = detect_trace(*m, trace, cfg);

    StreamDetector whole(m, cfg);
    const auto events = replay(whole, trace, 0, trace.rows());
    CHECK(whole.state().alert_row == batch.verdict.alert_row);
    REQUIRE(batch.verdict.malicious);
    {
      REQUIRE_FALSE(events.empty());
      CHECK(events.front().first == *batch.verdict.alert_row);
      CHECK(events.front().second == StreamEvent::kAlert);
    }

    StreamDetector first(m, cfg);
    auto split = replay(first, trace, 0, 101);
    const std::string snapshot = first.save_state();
    StreamDetector second(m, cfg);
    second.restore_state(snapshot);
    const auto rest = replay(second, trace, 101, trace.rows());
    split.insert(split.end(), rest.begin(), rest.end());
    CHECK(split == events);
    CHECK(second.save_state() == whole.save_state());
  }
  // Row probabilities of the conv stream match the batch trace route.
  const auto& conv = ms[1];
  const auto batch = models::predict_rows(*conv, trace);
  StreamDetector d(conv, DetectorConfig{});
  for (std::size_t i = 0; i < trace.rows(); ++i) {
    d.push(trace.times[i], trace.features.row(static_cast<Eigen::Index>(i)));
    REQUIRE(std::abs(*d.last_probability() - batch[i]) < 1e-12);
  }
  StreamDetector other(ms[0], DetectorConfig{});
  CHECK_THROWS_AS(other.restore_state(d.save_state()), Error);
  CHECK(render_event(1.5, 3, "abc", StreamEvent::kAlert) ==
        R"({"event":"alert","model":"abc","row":3,"t":1.5})");
}
