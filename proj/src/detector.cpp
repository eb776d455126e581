// SPDX-License-Identifier: Apache-2.0
#include "sidewatch/detector.hpp"

#include "sidewatch/error.hpp"

#include <json.hpp>

#include <cmath>

namespace sidewatch::detect {

using nlohmann::json;

std::string_view aggregation_name(Aggregation a) { return a == Aggregation::kAny ? "any" : "majority"; }

Aggregation parse_aggregation(std::string_view name) {
  if (name == "any") return Aggregation::kAny;
  if (name == "majority") return Aggregation::kMajority;
  throw Error(ErrorCode::kBadConfig, "unknown aggregation '" + std::string(name) + "' (any|majority)");
}

void DetectorConfig::validate() const {
  if (!(prob_cutoff > 0.0 && prob_cutoff < 1.0)) throw Error(ErrorCode::kBadConfig, "prob_cutoff must be in (0, 1)");
  if (consec_threshold < 1) throw Error(ErrorCode::kBadConfig, "consec_threshold must be >= 1");
  if (!(sample_period_s > 0.0)) throw Error(ErrorCode::kBadConfig, "sample_period_s must be positive");
}

DetectionVerdict classify_labels(const std::vector<int>& row_labels, const DetectorConfig& cfg) {
  cfg.validate();
  if (row_labels.empty()) throw Error(ErrorCode::kInvalidArgument, "cannot classify an empty trace");
  DetectionVerdict v;
  std::size_t run = 0;
  for (std::size_t i = 0; i < row_labels.size(); ++i) {
    run = row_labels[i] ? run + 1 : 0;
    if (run == cfg.consec_threshold) {
      v.malicious = true;
      v.alert_row = i;
      break;
    }
  }
  return v;
}

DetectionVerdict classify_file(const std::vector<double>& row_probs, const DetectorConfig& cfg) {
  std::vector<int> labels(row_probs.size());
  for (std::size_t i = 0; i < row_probs.size(); ++i) labels[i] = row_probs[i] > cfg.prob_cutoff;
  return classify_labels(labels, cfg);
}

double time_to_detect(const DetectionVerdict& verdict, std::size_t onset_row, const DetectorConfig& cfg) {
  if (!verdict.malicious || !verdict.alert_row) throw Error(ErrorCode::kInvalidArgument, "no alert to time");
  if (*verdict.alert_row < onset_row)
    throw Error(ErrorCode::kAlertBeforeOnset, "alert at row " + std::to_string(*verdict.alert_row) +
                                                  " precedes onset row " + std::to_string(onset_row));
  return static_cast<double>(*verdict.alert_row - onset_row + 1) * cfg.sample_period_s;
}

DetectionVerdict classify_sequences(const std::vector<double>& seq_probs, std::size_t sequence_length,
                                    const DetectorConfig& cfg) {
  cfg.validate();
  DetectionVerdict v;
  std::size_t flagged = 0;
  for (std::size_t k = 0; k < seq_probs.size(); ++k) {
    if (seq_probs[k] > cfg.prob_cutoff) {
      if (!v.alert_row) v.alert_row = (k + 1) * sequence_length - 1;
      ++flagged;
    }
  }
  v.malicious = cfg.aggregation == Aggregation::kAny ? flagged > 0
                                                       : flagged > 0 && 2 * flagged >= seq_probs.size();
  if (!v.malicious) v.alert_row.reset();
  return v;
}

TraceDetection detect_trace(const models::ModelArtifact& model, const telemetry::Trace& trace,
                            const DetectorConfig& cfg) {
  TraceDetection out;
  if (models::is_row_family(model.family)) {
    out.probabilities = models::predict_rows(model, trace);
    out.verdict = classify_file(out.probabilities, cfg);
  } else if (models::is_rnn_family(model.family)) {
    const std::size_t l = model.rnn.sequence_length;
    const Matrix prepared = models::prepare_rows(model, trace.features);
    for (std::size_t k = 0; (k + 1) * l <= trace.rows(); ++k)
      out.probabilities.push_back(
          models::predict_sequence(model, prepared.middleRows(static_cast<Eigen::Index>(k * l), static_cast<Eigen::Index>(l))));
    out.verdict = classify_sequences(out.probabilities, l, cfg);
  } else {
    throw Error(ErrorCode::kInvalidArgument, "autoencoders do not classify traces");
  }
  if (out.verdict.malicious) {
    if (const auto onset = trace.onset_row()) {
      if (*out.verdict.alert_row < *onset)
        out.alert_before_onset = true;
      else
        out.verdict.time_to_detect_s = time_to_detect(out.verdict, *onset, cfg);
    }
  }
  return out;
}

std::string_view event_name(StreamEvent e) {
  switch (e) {
    case StreamEvent::kNone: return "none";
    case StreamEvent::kAlert: return "alert";
    case StreamEvent::kStillMalicious: return "still_malicious";
  }
  return "?";
}

namespace {

void check_time(StreamState& state, std::optional<double> time) {
  if (!time) return;
  if (state.last_time && !(*time > *state.last_time))
    throw Error(ErrorCode::kOutOfOrderRow, "row time " + telemetry::format_double(*time) + " does not follow " +
                                               telemetry::format_double(*state.last_time));
  state.last_time = time;
}

// Shared transition once a row (or completed sequence) has been judged.
StreamEvent advance(StreamState& state, bool malicious, std::size_t needed, const DetectorConfig& cfg) {
  const std::size_t row = state.rows++;
  if (state.alerted && cfg.latching) return StreamEvent::kStillMalicious;
  state.counter = malicious ? state.counter + 1 : 0;
  if (state.alerted) {
    if (state.counter > 0) return StreamEvent::kStillMalicious;
    state.alerted = false;  // run broken: re-arm
    return StreamEvent::kNone;
  }
  if (state.counter >= needed) {
    state.alerted = true;
    ++state.alerts;
    if (!state.alert_row) state.alert_row = row;
    return StreamEvent::kAlert;
  }
  return StreamEvent::kNone;
}

json row_json(const RowVector& r) { return std::vector<double>(r.data(), r.data() + r.size()); }

RowVector row_from(const json& j) {
  const auto v = j.get<std::vector<double>>();
  RowVector r(static_cast<Eigen::Index>(v.size()));
  for (std::size_t i = 0; i < v.size(); ++i) r(static_cast<Eigen::Index>(i)) = v[i];
  return r;
}

}  // namespace

StreamEvent stream_step(StreamState& state, double prob, const DetectorConfig& cfg, std::optional<double> time) {
  check_time(state, time);
  return advance(state, prob > cfg.prob_cutoff, cfg.consec_threshold, cfg);
}

void stream_reset(StreamState& state) {
  state.counter = 0;
  state.alerted = false;
}

StreamDetector::StreamDetector(std::shared_ptr<const models::ModelArtifact> model, DetectorConfig cfg)
    : model_(std::move(model)), cfg_(cfg) {
  if (!model_) throw Error(ErrorCode::kInvalidArgument, "stream detector needs a model");
  cfg_.validate();
  if (model_->family == models::Family::kAutoencoder)
    throw Error(ErrorCode::kInvalidArgument, "autoencoders cannot drive a detector");
  model_id_ = models::model_id(*model_);
  if (const auto* conv = std::get_if<models::ConvNet>(&model_->net))
    windows_ = features::WindowStream(conv->sizes, model_->input_dim);
}

StreamEvent StreamDetector::push(double time, const RowVector& raw_row) {
  check_time(state_, time);
  const Matrix prepared = models::prepare_rows(*model_, Matrix(raw_row));
  switch (model_->family) {
    case models::Family::kMlp:
      last_prob_ = models::predict_prepared_rows(*model_, prepared)[0];
      return advance(state_, *last_prob_ > cfg_.prob_cutoff, cfg_.consec_threshold, cfg_);
    case models::Family::kConvMultibranch:
      windows_.push(prepared.row(0));
      last_prob_ = models::conv_predict_windows(*model_, windows_.windows());
      return advance(state_, *last_prob_ > cfg_.prob_cutoff, cfg_.consec_threshold, cfg_);
    default: {
      pending_.push_back(prepared.row(0));
      const std::size_t l = model_->rnn.sequence_length;
      if (pending_.size() < l) {
        // Mid-sequence rows keep the current state: latched or in an alerted run stays malicious.
        ++state_.rows;
        return state_.alerted ? StreamEvent::kStillMalicious : StreamEvent::kNone;
      }
      Matrix seq(static_cast<Eigen::Index>(l), static_cast<Eigen::Index>(model_->input_dim));
      for (std::size_t i = 0; i < l; ++i) seq.row(static_cast<Eigen::Index>(i)) = pending_[i];
      pending_.clear();
      last_prob_ = models::predict_sequence(*model_, seq);
      // Each completed malicious sequence is one step of a run that needs a single step.
      return advance(state_, *last_prob_ > cfg_.prob_cutoff, 1, cfg_);
    }
  }
}

std::string StreamDetector::save_state() const {
  json j;
  j["format"] = "sidewatch-stream";
  j["version"] = 1;
  j["model_id"] = model_id_;
  j["rows"] = state_.rows;
  j["counter"] = state_.counter;
  j["alerted"] = state_.alerted;
  j["alert_row"] = state_.alert_row ? json(*state_.alert_row) : json(nullptr);
  j["alerts"] = state_.alerts;
  j["last_time"] = state_.last_time ? json(*state_.last_time) : json(nullptr);
  j["last_probability"] = last_prob_ ? json(*last_prob_) : json(nullptr);
  json pending = json::array();
  for (const auto& r : pending_) pending.push_back(row_json(r));
  j["pending"] = std::move(pending);
  const auto& w = windows_.state();
  json win;
  win["rows"] = w.rows;
  win["first"] = row_json(w.first);
  win["sum_short"] = row_json(w.sum_short);
  win["sum_long"] = row_json(w.sum_long);
  json hist = json::array();
  for (const auto& d : w.history) {
    json rows = json::array();
    for (const auto& r : d) rows.push_back(row_json(r));
    hist.push_back(std::move(rows));
  }
  win["history"] = std::move(hist);
  j["windows"] = std::move(win);
  return j.dump();
}

void StreamDetector::restore_state(std::string_view snapshot) {
  try {
    const json j = json::parse(snapshot);
    if (j.at("format") != "sidewatch-stream" || j.at("version") != 1)
      throw Error(ErrorCode::kInvalidArgument, "not a stream checkpoint");
    if (j.at("model_id").get<std::string>() != model_id_)
      throw Error(ErrorCode::kInvalidArgument, "checkpoint was written for a different model");
    StreamState s;
    s.rows = j.at("rows").get<std::size_t>();
    s.counter = j.at("counter").get<std::size_t>();
    s.alerted = j.at("alerted").get<bool>();
    if (!j.at("alert_row").is_null()) s.alert_row = j.at("alert_row").get<std::size_t>();
    s.alerts = j.at("alerts").get<std::size_t>();
    if (!j.at("last_time").is_null()) s.last_time = j.at("last_time").get<double>();
    std::vector<RowVector> pending;
    for (const auto& r : j.at("pending")) pending.push_back(row_from(r));
    const json& win = j.at("windows");
    features::WindowStream::State w;
    w.rows = win.at("rows").get<std::size_t>();
    w.first = row_from(win.at("first"));
    w.sum_short = row_from(win.at("sum_short"));
    w.sum_long = row_from(win.at("sum_long"));
    const json& hist = win.at("history");
    if (hist.size() != features::kBranchCount) throw Error(ErrorCode::kInvalidArgument, "bad window history");
    for (std::size_t b = 0; b < features::kBranchCount; ++b)
      for (const auto& r : hist[b]) w.history[b].push_back(row_from(r));
    if (std::holds_alternative<models::ConvNet>(model_->net)) windows_.restore(std::move(w));
    state_ = s;
    pending_ = std::move(pending);
    last_prob_.reset();
    if (!j.at("last_probability").is_null()) last_prob_ = j.at("last_probability").get<double>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kInvalidArgument, std::string("malformed stream checkpoint: ") + e.what());
  }
}

std::string render_event(double t, std::size_t row, std::string_view model_id, StreamEvent event) {
  json j;
  j["t"] = t;
  j["row"] = row;
  j["model"] = model_id;
  j["event"] = event_name(event);
  return j.dump();
}

}  // namespace sidewatch::detect
