// SPDX-License-Identifier: Apache-2.0
#include "sidewatch/models.hpp"

#include "sidewatch/error.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <numeric>
#include <sstream>
#include <tuple>

namespace sidewatch::models {

using features::Branch;
using features::BranchSet;
using features::kBranchCount;
using nn::Activation;
using nn::Cache;
using nn::Mode;
using telemetry::Trace;

namespace {

constexpr std::uint64_t kInitStream = 0x1417;
constexpr std::uint64_t kShuffleStream = 0x5f1e;
constexpr std::uint64_t kSplitStream = 0x5b17;
constexpr std::uint64_t kProbeStream = 0x9c4e;

features::NormStats identity_norm(std::size_t width) {
  return {RowVector::Zero(static_cast<Eigen::Index>(width)), RowVector::Ones(static_cast<Eigen::Index>(width))};
}

void require_width(std::size_t got, std::size_t want, const char* what) {
  if (got != want)
    throw Error(ErrorCode::kShapeMismatch,
                std::string(what) + " has " + std::to_string(got) + " columns, model expects " + std::to_string(want));
}

// ---------------------------------------------------------------- mlp

double mlp_objective(MlpNet& net, const Matrix& x, const std::vector<int>& y, bool backward) {
  std::vector<Cache> caches(net.layers.size());
  Matrix a = x;
  for (std::size_t i = 0; i < net.layers.size(); ++i) a = net.layers[i].forward(a, caches[i], Mode::kTrain);
  const double b = static_cast<double>(x.rows());
  double loss = 0.0;
  Matrix d(x.rows(), 1);
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const auto l = nn::bce_loss(a(r, 0), y[static_cast<std::size_t>(r)]);
    loss += l.loss;
    d(r, 0) = l.grad / b;
  }
  if (backward)
    for (std::size_t i = net.layers.size(); i-- > 0;) d = net.layers[i].backward(caches[i], d);
  return loss / b;
}

Matrix mlp_infer(const MlpNet& net, const Matrix& x) {
  Matrix a = x;
  for (const auto& layer : net.layers) a = layer.infer(a);
  return a;
}

// ---------------------------------------------------------------- conv

struct HeadCaches {
  Cache hidden, dropout, output;
};

Matrix head_forward(const ConvNet& net, const Matrix& pooled, HeadCaches& c, Mode mode, Rng* rng) {
  Matrix h = net.hidden.forward(pooled, c.hidden, mode);
  h = net.dropout.forward(h, c.dropout, mode, rng);
  return net.output.forward(h, c.output, mode);
}

// Mean BCE plus the head's regularization terms; fills d(pooled) when requested.
double head_objective(ConvNet& net, const Matrix& pooled, const std::vector<int>& labels, Mode mode, Rng* rng,
                      Matrix* dpooled) {
  HeadCaches c;
  const Matrix p = head_forward(net, pooled, c, mode, rng);
  const double b = static_cast<double>(p.rows());
  double loss = 0.0;
  Matrix d(p.rows(), 1);
  for (Eigen::Index r = 0; r < p.rows(); ++r) {
    const auto l = nn::bce_loss(p(r, 0), labels[static_cast<std::size_t>(r)]);
    loss += l.loss;
    d(r, 0) = l.grad / b;
  }
  loss = loss / b + net.hidden.activity_penalty(c.hidden) + net.hidden.weight_penalty();
  if (dpooled != nullptr) {
    d = net.output.backward(c.output, d);
    d = net.dropout.backward(c.dropout, d);
    *dpooled = net.hidden.backward(c.hidden, d);
  }
  return loss;
}

// Conv outputs for the rows [a, b) of one trace, computed on one contiguous padded
// segment per branch; the window of each row is a slice of the segment.
struct BlockPass {
  std::array<Cache, kBranchCount> caches;
  std::array<Eigen::Index, kBranchCount> out_rows{};
  std::vector<Eigen::Index> argmax;  // [branch][row][filter] -> row of the conv output
};

Matrix conv_block_pooled(const ConvNet& net, const BranchSet& bs, std::size_t a, std::size_t b, Mode mode,
                         BlockPass* pass) {
  const auto channels = static_cast<Eigen::Index>(net.branches[0].filters());
  const auto rows = static_cast<Eigen::Index>(b - a);
  const auto width = bs.raw.cols();
  Matrix pooled(rows, channels * static_cast<Eigen::Index>(kBranchCount));
  if (pass != nullptr) pass->argmax.assign(kBranchCount * static_cast<std::size_t>(rows * channels), 0);
  for (std::size_t bi = 0; bi < kBranchCount; ++bi) {
    const auto g = features::branch_geometry(net.sizes, static_cast<Branch>(bi));
    const Matrix& series = bs.branch(static_cast<Branch>(bi));
    const std::size_t first = g.window_start(a);
    const std::size_t len = g.window_start(b - 1) - first + g.length;
    Matrix segment(static_cast<Eigen::Index>(len), width);
    for (std::size_t q = 0; q < len; ++q) {
      const std::size_t idx = first + q;
      segment.row(static_cast<Eigen::Index>(q)) =
          idx < g.pad ? bs.raw.row(0) : series.row(static_cast<Eigen::Index>(idx - g.pad));
    }
    Cache local;
    Cache& cache = pass != nullptr ? pass->caches[bi] : local;
    const Matrix out = net.branches[bi].forward(segment, cache, mode);
    if (pass != nullptr) pass->out_rows[bi] = out.rows();
    const auto positions = static_cast<Eigen::Index>(g.length - net.branches[bi].kernel_size() + 1);
    for (Eigen::Index r = 0; r < rows; ++r) {
      const auto start = static_cast<Eigen::Index>(g.window_start(a + static_cast<std::size_t>(r)) - first);
      for (Eigen::Index c = 0; c < channels; ++c) {
        Eigen::Index best = start;
        for (Eigen::Index t = start + 1; t < start + positions; ++t)
          if (out(t, c) > out(best, c)) best = t;
        pooled(r, static_cast<Eigen::Index>(bi) * channels + c) = out(best, c);
        if (pass != nullptr)
          pass->argmax[(bi * static_cast<std::size_t>(rows) + static_cast<std::size_t>(r)) *
                           static_cast<std::size_t>(channels) +
                       static_cast<std::size_t>(c)] = best;
      }
    }
  }
  return pooled;
}

double conv_block_objective(ConvNet& net, const BranchSet& bs, std::size_t a, std::size_t b,
                            const std::vector<int>& labels, bool backward, Mode mode, Rng* rng) {
  BlockPass pass;
  const Matrix pooled = conv_block_pooled(net, bs, a, b, mode, backward ? &pass : nullptr);
  const std::vector<int> block_labels(labels.begin() + static_cast<std::ptrdiff_t>(a),
                                      labels.begin() + static_cast<std::ptrdiff_t>(b));
  Matrix dpooled;
  const double loss = head_objective(net, pooled, block_labels, mode, rng, backward ? &dpooled : nullptr);
  if (!backward) return loss;
  const auto channels = static_cast<Eigen::Index>(net.branches[0].filters());
  const auto rows = static_cast<Eigen::Index>(b - a);
  for (std::size_t bi = 0; bi < kBranchCount; ++bi) {
    Matrix dout = Matrix::Zero(pass.out_rows[bi], channels);
    for (Eigen::Index r = 0; r < rows; ++r)
      for (Eigen::Index c = 0; c < channels; ++c)
        dout(pass.argmax[(bi * static_cast<std::size_t>(rows) + static_cast<std::size_t>(r)) *
                             static_cast<std::size_t>(channels) +
                         static_cast<std::size_t>(c)],
             c) += dpooled(r, static_cast<Eigen::Index>(bi) * channels + c);
    net.branches[bi].backward(pass.caches[bi], dout, false);
  }
  return loss;
}

double conv_window_objective(ConvNet& net, const features::RowWindows& windows, int label, bool backward, Mode mode,
                             Rng* rng) {
  const auto channels = static_cast<Eigen::Index>(net.branches[0].filters());
  std::array<Cache, kBranchCount> conv_caches;
  std::array<Cache, kBranchCount> pool_caches;
  Matrix pooled(1, channels * static_cast<Eigen::Index>(kBranchCount));
  for (std::size_t bi = 0; bi < kBranchCount; ++bi) {
    const Matrix out = net.branches[bi].forward(windows[bi], conv_caches[bi], mode);
    pooled.middleCols(static_cast<Eigen::Index>(bi) * channels, channels) =
        net.pool.forward(out, pool_caches[bi], mode);
  }
  Matrix dpooled;
  const double loss = head_objective(net, pooled, {label}, mode, rng, backward ? &dpooled : nullptr);
  if (backward)
    for (std::size_t bi = 0; bi < kBranchCount; ++bi) {
      const Matrix dout =
          net.pool.backward(pool_caches[bi], dpooled.middleCols(static_cast<Eigen::Index>(bi) * channels, channels));
      net.branches[bi].backward(conv_caches[bi], dout, false);
    }
  return loss;
}

std::vector<double> conv_predict_branchset(const ConvNet& net, const BranchSet& bs) {
  constexpr std::size_t kBlock = 1024;
  const auto t = static_cast<std::size_t>(bs.raw.rows());
  std::vector<double> out;
  out.reserve(t);
  for (std::size_t a = 0; a < t; a += kBlock) {
    const std::size_t b = std::min(t, a + kBlock);
    const Matrix pooled = conv_block_pooled(net, bs, a, b, Mode::kInfer, nullptr);
    HeadCaches c;
    const Matrix p = head_forward(net, pooled, c, Mode::kInfer, nullptr);
    for (Eigen::Index r = 0; r < p.rows(); ++r) out.push_back(p(r, 0));
  }
  return out;
}

// ---------------------------------------------------------------- rnn

Matrix block_forward(const RecurrentBlock& block, const Matrix& x, Cache& cache, Mode mode) {
  return std::visit([&](const auto& layer) { return layer.forward(x, cache, mode); }, block);
}

Matrix block_backward(RecurrentBlock& block, const Cache& cache, const Matrix& dy) {
  return std::visit([&](auto& layer) { return layer.backward(cache, dy); }, block);
}

double rnn_infer(const RnnNet& net, const Matrix& sequence) {
  Matrix a = sequence;
  for (const auto& block : net.layers) a = std::visit([&](const auto& layer) { return layer.infer(a); }, block);
  return net.head.infer(a)(0, 0);
}

double rnn_objective(RnnNet& net, const std::vector<const Matrix*>& sequences, const std::vector<int>& labels,
                     bool backward) {
  const double b = static_cast<double>(sequences.size());
  double loss = 0.0;
  for (std::size_t s = 0; s < sequences.size(); ++s) {
    std::vector<Cache> caches(net.layers.size());
    Cache head_cache;
    Matrix a = *sequences[s];
    for (std::size_t i = 0; i < net.layers.size(); ++i) a = block_forward(net.layers[i], a, caches[i], Mode::kTrain);
    const Matrix p = net.head.forward(a, head_cache, Mode::kTrain);
    const auto l = nn::bce_loss(p(0, 0), labels[s]);
    loss += l.loss;
    if (backward) {
      Matrix d = Matrix::Constant(1, 1, l.grad / b);
      d = net.head.backward(head_cache, d);
      for (std::size_t i = net.layers.size(); i-- > 0;) d = block_backward(net.layers[i], caches[i], d);
    }
  }
  return loss / b;
}

// ---------------------------------------------------------------- autoencoder

double autoencoder_objective(AutoencoderNet& net, const Matrix& x, bool backward) {
  Cache ce, cd;
  const Matrix code = net.encoder.forward(x, ce, Mode::kTrain);
  const Matrix recon = net.decoder.forward(code, cd, Mode::kTrain);
  auto l = nn::mse_loss(recon, x);
  if (backward) net.encoder.backward(ce, net.decoder.backward(cd, l.grad));
  return l.loss;
}

// ---------------------------------------------------------------- training loop

struct Objective {
  std::size_t examples = 0;
  std::size_t per_step = 1;
  // Accumulates gradients for the given examples and returns their mean loss.
  std::function<double(const std::vector<std::size_t>&, Rng&)> step;
  // Mean loss over the given examples, without touching gradients.
  std::function<double(const std::vector<std::size_t>&)> evaluate;
};

TrainLog run_training(ModelArtifact& model, const Objective& objective, const TrainConfig& config) {
  const std::size_t n = objective.examples;
  if (n == 0) throw Error(ErrorCode::kNoData, "no training examples");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<std::size_t> train = order;
  std::vector<std::size_t> val;
  if (config.validation_fraction > 0.0 && n >= 2) {
    Rng split_rng(derive_seed(config.seed, kSplitStream));
    std::shuffle(order.begin(), order.end(), split_rng);
    const auto nval = std::clamp<std::size_t>(
        static_cast<std::size_t>(std::llround(config.validation_fraction * static_cast<double>(n))), 1, n - 1);
    val.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(nval));
    train.assign(order.begin() + static_cast<std::ptrdiff_t>(nval), order.end());
    std::sort(val.begin(), val.end());
    std::sort(train.begin(), train.end());
  }

  const auto params = model.params();
  nn::Optimizer optimizer(config.optimizer);
  Rng rng(derive_seed(config.seed, kShuffleStream));
  TrainLog log;
  double best = std::numeric_limits<double>::infinity();
  double best_seen = best;
  std::size_t wait = 0;
  std::vector<Matrix> snapshot;
  std::size_t epoch = 0;
  while (epoch < config.max_epochs) {
    ++epoch;
    std::shuffle(train.begin(), train.end(), rng);
    const double lr = optimizer.learning_rate();
    double sum = 0.0;
    std::size_t count = 0;
    for (std::size_t s = 0; s < train.size(); s += objective.per_step) {
      const std::vector<std::size_t> batch(
          train.begin() + static_cast<std::ptrdiff_t>(s),
          train.begin() + static_cast<std::ptrdiff_t>(std::min(train.size(), s + objective.per_step)));
      for (auto* p : params) p->zero_grad();
      sum += objective.step(batch, rng) * static_cast<double>(batch.size());
      count += batch.size();
      optimizer.step(params);
    }
    const double train_loss = sum / static_cast<double>(count);
    const double val_loss = val.empty() ? std::numeric_limits<double>::quiet_NaN() : objective.evaluate(val);
    log.epochs.push_back({epoch, train_loss, val_loss, lr});
    const double monitored = val.empty() ? train_loss : val_loss;
    optimizer.observe(monitored);
    if (!val.empty() && monitored < best_seen) {
      best_seen = monitored;
      snapshot.clear();
      for (auto* p : params) snapshot.push_back(p->value);
    }
    if (monitored < best - config.min_delta) {
      best = monitored;
      wait = 0;
    } else if (++wait >= config.early_stop_patience) {
      log.early_stopped = true;
      break;
    }
  }
  if (!snapshot.empty())
    for (std::size_t i = 0; i < params.size(); ++i) {
      params[i]->value = snapshot[i];
      ++params[i]->version;
    }
  model.epochs_trained = epoch;
  return log;
}

std::uint64_t fnv1a(const void* data, std::size_t size, std::uint64_t h = 0xcbf29ce484222325ULL) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < size; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Storage-order independent ordering: by filename fields, then by content.
std::vector<const Trace*> canonical_order(const std::vector<Trace>& traces) {
  using Key = std::tuple<std::string, std::string, std::string, std::string, double, std::size_t, std::uint64_t>;
  std::vector<std::pair<Key, const Trace*>> keyed;
  keyed.reserve(traces.size());
  for (const auto& t : traces) {
    std::uint64_t h = fnv1a(t.features.data(), static_cast<std::size_t>(t.features.size()) * sizeof(double));
    h = fnv1a(t.labels.data(), t.labels.size() * sizeof(int), h);
    keyed.push_back({Key{t.meta.subject_name, t.meta.os, t.meta.hardware_id, t.meta.category,
                         t.meta.onset_s.value_or(-1.0), t.rows(), h},
                     &t});
  }
  std::stable_sort(keyed.begin(), keyed.end(), [](const auto& x, const auto& y) { return x.first < y.first; });
  std::vector<const Trace*> out;
  for (const auto& [k, t] : keyed) out.push_back(t);
  return out;
}

Matrix gather_rows(const Matrix& x, const std::vector<std::size_t>& rows) {
  Matrix out(static_cast<Eigen::Index>(rows.size()), x.cols());
  for (std::size_t i = 0; i < rows.size(); ++i)
    out.row(static_cast<Eigen::Index>(i)) = x.row(static_cast<Eigen::Index>(rows[i]));
  return out;
}

template <typename F>
double batched_mean(const std::vector<std::size_t>& examples, std::size_t batch, F&& f) {
  double sum = 0.0;
  for (std::size_t s = 0; s < examples.size(); s += batch) {
    const std::vector<std::size_t> part(examples.begin() + static_cast<std::ptrdiff_t>(s),
                                        examples.begin() + static_cast<std::ptrdiff_t>(
                                                               std::min(examples.size(), s + batch)));
    sum += f(part) * static_cast<double>(part.size());
  }
  return sum / static_cast<double>(examples.size());
}

}  // namespace

// ---------------------------------------------------------------- families

std::string_view family_name(Family f) {
  switch (f) {
    case Family::kMlp: return "mlp";
    case Family::kConvMultibranch: return "conv_multibranch";
    case Family::kAutoencoder: return "autoencoder";
    case Family::kRnnVanilla: return "rnn_vanilla";
    case Family::kRnnLstm: return "rnn_lstm";
    case Family::kRnnLstmBi: return "rnn_lstm_bi";
    case Family::kRnnGru: return "rnn_gru";
    case Family::kRnnGruBi: return "rnn_gru_bi";
  }
  return "?";
}

Family parse_family(std::string_view name) {
  for (Family f : kAllFamilies)
    if (family_name(f) == name) return f;
  throw Error(ErrorCode::kInvalidArgument, "unknown model family '" + std::string(name) + "'");
}

bool is_row_family(Family f) { return f == Family::kMlp || f == Family::kConvMultibranch; }
bool is_rnn_family(Family f) { return f != Family::kMlp && f != Family::kConvMultibranch && f != Family::kAutoencoder; }

nn::CellKind rnn_cell(Family f) {
  switch (f) {
    case Family::kRnnVanilla: return nn::CellKind::kVanilla;
    case Family::kRnnLstm:
    case Family::kRnnLstmBi: return nn::CellKind::kLstm;
    case Family::kRnnGru:
    case Family::kRnnGruBi: return nn::CellKind::kGru;
    default: throw Error(ErrorCode::kInvalidArgument, "not a recurrent family");
  }
}

bool rnn_bidirectional(Family f) { return f == Family::kRnnLstmBi || f == Family::kRnnGruBi; }

// ---------------------------------------------------------------- builders

ModelArtifact build_mlp(std::size_t input_dim, const MlpSettings& settings, std::uint64_t seed) {
  if (input_dim == 0) throw Error(ErrorCode::kBadShape, "mlp input dim must be >= 1");
  for (auto h : settings.hidden)
    if (h == 0) throw Error(ErrorCode::kBadShape, "mlp hidden sizes must be >= 1");
  ModelArtifact m;
  m.family = Family::kMlp;
  m.input_dim = input_dim;
  m.mlp = settings;
  m.seed = seed;
  m.norm = identity_norm(input_dim);
  MlpNet net;
  Rng rng(derive_seed(seed, kInitStream));
  std::size_t prev = input_dim;
  for (auto h : settings.hidden) {
    net.layers.emplace_back(prev, h, Activation::kTanh);
    prev = h;
  }
  net.layers.emplace_back(prev, 1, Activation::kSigmoid);
  for (auto& layer : net.layers) layer.init(rng);
  m.net = std::move(net);
  return m;
}

ModelArtifact build_conv_multibranch(std::size_t input_dim, const ConvSettings& settings, double sample_period_s,
                                     std::uint64_t seed) {
  if (input_dim == 0) throw Error(ErrorCode::kBadShape, "conv input dim must be >= 1");
  if (settings.filters == 0 || settings.kernel == 0 || settings.dense_units == 0)
    throw Error(ErrorCode::kBadShape, "conv filters, kernel and dense width must be >= 1");
  if (!(settings.dropout >= 0.0 && settings.dropout < 1.0))
    throw Error(ErrorCode::kInvalidArgument, "dropout rate must be in [0, 1)");
  const auto sizes = features::resolve_branch_sizes(settings.branches, sample_period_s);
  for (std::size_t bi = 0; bi < kBranchCount; ++bi) {
    const auto g = features::branch_geometry(sizes, static_cast<Branch>(bi));
    if (g.length < settings.kernel)
      throw Error(ErrorCode::kKernelTooLong, "branch window of " + std::to_string(g.length) +
                                                 " rows is shorter than the kernel (" +
                                                 std::to_string(settings.kernel) + ")");
  }
  ModelArtifact m;
  m.family = Family::kConvMultibranch;
  m.input_dim = input_dim;
  m.sample_period_s = sample_period_s;
  m.conv = settings;
  m.seed = seed;
  m.norm = identity_norm(input_dim);
  ConvNet net;
  Rng rng(derive_seed(seed, kInitStream));
  for (auto& conv : net.branches) {
    conv = nn::Conv1d(input_dim, settings.filters, settings.kernel, Activation::kTanh);
    conv.init(rng);
  }
  net.hidden = nn::Dense(kBranchCount * settings.filters, settings.dense_units, Activation::kTanh, settings.head_reg);
  net.hidden.init(rng);
  net.dropout = nn::Dropout(settings.dropout);
  net.output = nn::Dense(settings.dense_units, 1, Activation::kSigmoid);
  net.output.init(rng);
  net.sizes = sizes;
  m.net = std::move(net);
  return m;
}

ModelArtifact build_autoencoder(std::size_t input_dim, std::size_t dim, std::uint64_t seed) {
  if (dim < 1 || dim >= input_dim)
    throw Error(ErrorCode::kBadShape, "autoencoder needs 1 <= d < F (got d=" + std::to_string(dim) +
                                          ", F=" + std::to_string(input_dim) + ")");
  ModelArtifact m;
  m.family = Family::kAutoencoder;
  m.input_dim = input_dim;
  m.autoencoder.dim = dim;
  m.seed = seed;
  m.norm = identity_norm(input_dim);
  AutoencoderNet net{nn::Dense(input_dim, dim, Activation::kTanh), nn::Dense(dim, input_dim, Activation::kLinear)};
  Rng rng(derive_seed(seed, kInitStream));
  net.encoder.init(rng);
  net.decoder.init(rng);
  m.net = std::move(net);
  return m;
}

ModelArtifact build_rnn(std::size_t input_dim, Family family, const RnnSettings& settings, std::uint64_t seed) {
  if (!is_rnn_family(family)) throw Error(ErrorCode::kInvalidArgument, "build_rnn needs a recurrent family");
  if (input_dim == 0) throw Error(ErrorCode::kBadShape, "rnn input dim must be >= 1");
  if (settings.layers.empty()) throw Error(ErrorCode::kBadShape, "rnn needs at least one recurrent layer");
  for (auto h : settings.layers)
    if (h == 0) throw Error(ErrorCode::kBadShape, "rnn layer sizes must be >= 1");
  if (settings.sequence_length == 0) throw Error(ErrorCode::kBadShape, "sequence length must be >= 1");
  ModelArtifact m;
  m.family = family;
  m.input_dim = input_dim;
  m.rnn = settings;
  m.seed = seed;
  m.norm = identity_norm(input_dim);
  RnnNet net;
  Rng rng(derive_seed(seed, kInitStream));
  const auto cell = rnn_cell(family);
  std::size_t prev = input_dim;
  for (std::size_t i = 0; i < settings.layers.size(); ++i) {
    const bool seq = i + 1 < settings.layers.size();
    if (rnn_bidirectional(family)) {
      nn::Bidirectional layer(cell, prev, settings.layers[i], seq);
      layer.init(rng);
      prev = layer.output_width();
      net.layers.emplace_back(std::move(layer));
    } else {
      nn::Recurrent layer(cell, prev, settings.layers[i], seq);
      layer.init(rng);
      prev = layer.output_width();
      net.layers.emplace_back(std::move(layer));
    }
  }
  net.head = nn::Dense(prev, 1, Activation::kSigmoid);
  net.head.init(rng);
  m.net = std::move(net);
  return m;
}

// ---------------------------------------------------------------- closed forms

std::size_t mlp_parameter_formula(std::size_t input_dim, const std::vector<std::size_t>& hidden) {
  std::size_t total = 0;
  std::size_t prev = input_dim;
  for (auto h : hidden) {
    total += prev * h + h;
    prev = h;
  }
  return total + prev + 1;
}

std::size_t conv_parameter_formula(std::size_t input_dim, const ConvSettings& s) {
  const std::size_t branch = s.kernel * input_dim * s.filters + s.filters;
  return kBranchCount * branch + (kBranchCount * s.filters * s.dense_units + s.dense_units) + s.dense_units + 1;
}

std::size_t autoencoder_parameter_formula(std::size_t input_dim, std::size_t dim) {
  return input_dim * dim + dim + dim * input_dim + input_dim;
}

std::size_t rnn_parameter_formula(std::size_t input_dim, Family family, const std::vector<std::size_t>& layers) {
  const std::size_t gates = nn::cell_gates(rnn_cell(family));
  const std::size_t dirs = rnn_bidirectional(family) ? 2 : 1;
  std::size_t total = 0;
  std::size_t prev = input_dim;
  for (auto h : layers) {
    total += dirs * gates * (prev * h + h * h + h);
    prev = dirs * h;
  }
  return total + prev + 1;
}

// ---------------------------------------------------------------- artifact accessors

std::vector<std::pair<std::string, const nn::Param*>> ModelArtifact::named_params() const {
  std::vector<std::pair<std::string, const nn::Param*>> out;
  auto add = [&](const std::string& prefix, const std::vector<const nn::Param*>& ps) {
    for (const auto* p : ps) out.emplace_back(prefix + "/" + p->name, p);
  };
  std::visit(
      [&](const auto& net) {
        using T = std::decay_t<decltype(net)>;
        if constexpr (std::is_same_v<T, MlpNet>) {
          for (std::size_t i = 0; i < net.layers.size(); ++i) add("dense" + std::to_string(i), net.layers[i].params());
        } else if constexpr (std::is_same_v<T, ConvNet>) {
          for (std::size_t i = 0; i < kBranchCount; ++i) add("branch" + std::to_string(i), net.branches[i].params());
          add("hidden", net.hidden.params());
          add("output", net.output.params());
        } else if constexpr (std::is_same_v<T, AutoencoderNet>) {
          add("encoder", net.encoder.params());
          add("decoder", net.decoder.params());
        } else {
          for (std::size_t i = 0; i < net.layers.size(); ++i) {
            const std::string prefix = "rnn" + std::to_string(i);
            if (const auto* bi = std::get_if<nn::Bidirectional>(&net.layers[i])) {
              add(prefix + "/forward", bi->forward_layer.params());
              add(prefix + "/backward", bi->backward_layer.params());
            } else {
              add(prefix, std::get<nn::Recurrent>(net.layers[i]).params());
            }
          }
          add("head", net.head.params());
        }
      },
      net);
  return out;
}

std::vector<std::pair<std::string, nn::Param*>> ModelArtifact::named_params() {
  std::vector<std::pair<std::string, nn::Param*>> out;
  for (const auto& [name, p] : std::as_const(*this).named_params())
    out.emplace_back(name, const_cast<nn::Param*>(p));
  return out;
}

std::vector<nn::Param*> ModelArtifact::params() {
  std::vector<nn::Param*> out;
  for (const auto& [name, p] : named_params()) out.push_back(p);
  return out;
}

std::size_t ModelArtifact::parameter_count() const {
  std::vector<const nn::Param*> ps;
  for (const auto& [name, p] : named_params()) ps.push_back(p);
  return nn::parameter_count(ps);
}

std::vector<nn::LayerSpec> ModelArtifact::layer_specs() const {
  std::vector<nn::LayerSpec> out;
  std::visit(
      [&](const auto& net) {
        using T = std::decay_t<decltype(net)>;
        if constexpr (std::is_same_v<T, MlpNet>) {
          for (const auto& l : net.layers) out.push_back(l.spec());
        } else if constexpr (std::is_same_v<T, ConvNet>) {
          for (const auto& c : net.branches) {
            out.push_back(c.spec());
            out.push_back(net.pool.spec(c.filters()));
          }
          out.push_back(net.hidden.spec());
          out.push_back(net.dropout.spec(net.hidden.units()));
          out.push_back(net.output.spec());
        } else if constexpr (std::is_same_v<T, AutoencoderNet>) {
          out.push_back(net.encoder.spec());
          out.push_back(net.decoder.spec());
        } else {
          for (const auto& b : net.layers) out.push_back(std::visit([](const auto& l) { return l.spec(); }, b));
          out.push_back(net.head.spec());
        }
      },
      net);
  return out;
}

// ---------------------------------------------------------------- data preparation

Matrix prepare_rows(const ModelArtifact& model, const Matrix& raw_rows) {
  require_width(static_cast<std::size_t>(raw_rows.cols()), model.raw_input_dim(), "trace");
  const Matrix x = model.encoder ? encode_rows(*model.encoder, raw_rows) : raw_rows;
  require_width(static_cast<std::size_t>(x.cols()), model.input_dim, "model input");
  return features::zscore_apply(model.norm, x);
}

std::vector<Trace> prepare_traces(const ModelArtifact& model, const std::vector<Trace>& traces) {
  std::vector<Trace> out;
  out.reserve(traces.size());
  for (const auto& t : traces) {
    Trace p = t;
    p.features = prepare_rows(model, t.features);
    if (static_cast<std::size_t>(p.features.cols()) != p.header.size()) {
      p.header.clear();
      for (Eigen::Index c = 0; c < p.features.cols(); ++c) p.header.push_back("enc_" + std::to_string(c));
    }
    out.push_back(std::move(p));
  }
  return out;
}

Matrix encode_rows(const ModelArtifact& encoder, const Matrix& raw_rows) {
  const auto* net = std::get_if<AutoencoderNet>(&encoder.net);
  if (net == nullptr) throw Error(ErrorCode::kInvalidArgument, "encoder must be an autoencoder");
  require_width(static_cast<std::size_t>(raw_rows.cols()), encoder.input_dim, "encoder input");
  return net->encoder.infer(features::zscore_apply(encoder.norm, raw_rows));
}

Matrix reconstruct_rows(const ModelArtifact& encoder, const Matrix& raw_rows) {
  const auto& net = std::get<AutoencoderNet>(encoder.net);
  return net.decoder.infer(encode_rows(encoder, raw_rows));
}

std::vector<Trace> encode_dataset(const ModelArtifact& encoder, const std::vector<Trace>& traces) {
  std::vector<Trace> out;
  out.reserve(traces.size());
  for (const auto& t : traces) {
    Trace e = t;
    e.features = encode_rows(encoder, t.features);
    e.header.clear();
    for (Eigen::Index c = 0; c < e.features.cols(); ++c) e.header.push_back("enc_" + std::to_string(c));
    out.push_back(std::move(e));
  }
  return out;
}

double reconstruction_mse(const ModelArtifact& encoder, const std::vector<Trace>& traces) {
  double sum = 0.0;
  double count = 0.0;
  for (const auto& t : traces) {
    const Matrix x = features::zscore_apply(encoder.norm, t.features);
    const Matrix r = reconstruct_rows(encoder, t.features);
    sum += (r - x).squaredNorm();
    count += static_cast<double>(x.size());
  }
  if (count == 0.0) throw Error(ErrorCode::kNoData, "no rows to reconstruct");
  return sum / count;
}

// ---------------------------------------------------------------- training

void TrainConfig::validate() const {
  optimizer.validate();
  if (max_epochs < 1) throw Error(ErrorCode::kInvalidArgument, "max epochs must be >= 1");
  if (batch_size < 1) throw Error(ErrorCode::kInvalidArgument, "batch size must be >= 1");
  if (early_stop_patience < 1) throw Error(ErrorCode::kInvalidArgument, "early-stop patience must be >= 1");
  if (!(validation_fraction >= 0.0 && validation_fraction < 1.0))
    throw Error(ErrorCode::kInvalidArgument, "validation fraction must be in [0, 1)");
  if (!(min_delta >= 0.0)) throw Error(ErrorCode::kInvalidArgument, "min delta must be >= 0");
}

TrainConfig default_train_config(Family family) {
  TrainConfig c;
  switch (family) {
    case Family::kMlp:
      c.max_epochs = 1000;
      break;
    case Family::kConvMultibranch:
      c.max_epochs = 10;
      c.early_stop_patience = 3;
      break;
    case Family::kAutoencoder:
      c.max_epochs = 200;
      break;
    default:
      c.optimizer.kind = nn::OptimizerKind::kRmsprop;
      c.max_epochs = 100;
      break;
  }
  return c;
}

std::string TrainLog::render() const {
  std::ostringstream out;
  out << "epoch\ttrain_loss\tval_loss\tlearning_rate\n";
  for (const auto& e : epochs)
    out << e.epoch << '\t' << telemetry::format_double(e.train_loss) << '\t'
        << (std::isnan(e.val_loss) ? std::string("nan") : telemetry::format_double(e.val_loss)) << '\t'
        << telemetry::format_double(e.learning_rate) << '\n';
  return out.str();
}

TrainResult train_model(ModelArtifact model, const std::vector<Trace>& traces, const TrainConfig& config) {
  config.validate();
  if (traces.empty()) throw Error(ErrorCode::kNoData, "no training traces");
  const bool needs_labels = model.family != Family::kAutoencoder;
  for (const auto& t : traces) {
    require_width(static_cast<std::size_t>(t.features.cols()), model.raw_input_dim(), "training trace");
    if (needs_labels && !t.labeled) throw Error(ErrorCode::kNoData, "training trace has no labels");
  }
  const auto ordered = canonical_order(traces);

  std::vector<Matrix> inputs;
  inputs.reserve(ordered.size());
  for (const auto* t : ordered) inputs.push_back(model.encoder ? encode_rows(*model.encoder, t->features) : t->features);
  std::vector<const Matrix*> parts;
  for (const auto& x : inputs) parts.push_back(&x);
  model.norm = features::zscore_fit(parts);
  for (auto& x : inputs) x = features::zscore_apply(model.norm, x);

  Objective obj;
  TrainResult result;
  // Data referenced by the objective closures; kept alive for the duration of training.
  Matrix rows;
  std::vector<int> labels;
  std::vector<BranchSet> branch_sets;
  std::vector<std::pair<std::size_t, std::size_t>> blocks;  // (trace, first row)
  features::SequenceBatch sequences;

  switch (model.family) {
    case Family::kMlp:
    case Family::kAutoencoder: {
      Eigen::Index total = 0;
      for (const auto& x : inputs) total += x.rows();
      rows.resize(total, static_cast<Eigen::Index>(model.input_dim));
      Eigen::Index at = 0;
      for (std::size_t i = 0; i < inputs.size(); ++i) {
        rows.middleRows(at, inputs[i].rows()) = inputs[i];
        at += inputs[i].rows();
        labels.insert(labels.end(), ordered[i]->labels.begin(), ordered[i]->labels.end());
      }
      obj.examples = static_cast<std::size_t>(total);
      obj.per_step = config.batch_size;
      if (model.family == Family::kMlp) {
        auto& net = std::get<MlpNet>(model.net);
        auto fn = [&net, &rows, &labels](const std::vector<std::size_t>& idx, bool backward) {
          std::vector<int> y;
          for (auto i : idx) y.push_back(labels[i]);
          return mlp_objective(net, gather_rows(rows, idx), y, backward);
        };
        obj.step = [fn](const std::vector<std::size_t>& idx, Rng&) { return fn(idx, true); };
        obj.evaluate = [fn, &config](const std::vector<std::size_t>& idx) {
          return batched_mean(idx, config.batch_size, [&](const auto& part) { return fn(part, false); });
        };
      } else {
        auto& net = std::get<AutoencoderNet>(model.net);
        auto fn = [&net, &rows](const std::vector<std::size_t>& idx, bool backward) {
          return autoencoder_objective(net, gather_rows(rows, idx), backward);
        };
        obj.step = [fn](const std::vector<std::size_t>& idx, Rng&) { return fn(idx, true); };
        obj.evaluate = [fn, &config](const std::vector<std::size_t>& idx) {
          return batched_mean(idx, config.batch_size, [&](const auto& part) { return fn(part, false); });
        };
      }
      break;
    }
    case Family::kConvMultibranch: {
      auto& net = std::get<ConvNet>(model.net);
      for (std::size_t i = 0; i < inputs.size(); ++i) {
        branch_sets.push_back(features::make_branch_set(inputs[i], net.sizes));
        for (std::size_t a = 0; a < static_cast<std::size_t>(inputs[i].rows()); a += config.batch_size)
          blocks.emplace_back(i, a);
      }
      obj.examples = blocks.size();
      obj.per_step = 1;
      auto fn = [&net, &branch_sets, &blocks, &ordered, &config](std::size_t block, bool backward, Mode mode,
                                                                  Rng* rng) {
        const auto [ti, a] = blocks[block];
        const std::size_t b = std::min(ordered[ti]->rows(), a + config.batch_size);
        return conv_block_objective(net, branch_sets[ti], a, b, ordered[ti]->labels, backward, mode, rng);
      };
      obj.step = [fn](const std::vector<std::size_t>& idx, Rng& rng) {
        double sum = 0.0;
        for (auto i : idx) sum += fn(i, true, Mode::kTrain, &rng);
        return sum / static_cast<double>(idx.size());
      };
      obj.evaluate = [fn](const std::vector<std::size_t>& idx) {
        double sum = 0.0;
        for (auto i : idx) sum += fn(i, false, Mode::kInfer, nullptr);
        return sum / static_cast<double>(idx.size());
      };
      break;
    }
    default: {
      std::vector<Trace> prepared;
      for (std::size_t i = 0; i < inputs.size(); ++i) {
        Trace p;
        p.meta = ordered[i]->meta;
        p.times = ordered[i]->times;
        p.labels = ordered[i]->labels;
        p.features = inputs[i];
        prepared.push_back(std::move(p));
      }
      sequences = features::chunk_sequences(prepared, model.rnn.sequence_length);
      if (sequences.sequences.empty())
        throw Error(ErrorCode::kNoData, "no trace has " + std::to_string(model.rnn.sequence_length) + " rows");
      obj.examples = sequences.sequences.size();
      obj.per_step = config.batch_size;
      auto& net = std::get<RnnNet>(model.net);
      auto fn = [&net, &sequences](const std::vector<std::size_t>& idx, bool backward) {
        std::vector<const Matrix*> seqs;
        std::vector<int> y;
        for (auto i : idx) {
          seqs.push_back(&sequences.sequences[i]);
          y.push_back(sequences.labels[i]);
        }
        return rnn_objective(net, seqs, y, backward);
      };
      obj.step = [fn](const std::vector<std::size_t>& idx, Rng&) { return fn(idx, true); };
      obj.evaluate = [fn, &config](const std::vector<std::size_t>& idx) {
        return batched_mean(idx, config.batch_size, [&](const auto& part) { return fn(part, false); });
      };
      break;
    }
  }
  result.log = run_training(model, obj, config);
  model.seed = config.seed;
  result.model = std::move(model);
  return result;
}

// ---------------------------------------------------------------- prediction

std::vector<double> predict_prepared_rows(const ModelArtifact& model, const Matrix& prepared) {
  require_width(static_cast<std::size_t>(prepared.cols()), model.input_dim, "prepared rows");
  if (prepared.rows() == 0) return {};
  if (const auto* mlp = std::get_if<MlpNet>(&model.net)) {
    const Matrix p = mlp_infer(*mlp, prepared);
    return std::vector<double>(p.data(), p.data() + p.size());
  }
  if (const auto* conv = std::get_if<ConvNet>(&model.net))
    return conv_predict_branchset(*conv, features::make_branch_set(prepared, conv->sizes));
  throw Error(ErrorCode::kInvalidArgument,
              std::string(family_name(model.family)) + " does not produce per-row predictions");
}

std::vector<double> predict_rows(const ModelArtifact& model, const Trace& trace) {
  if (!is_row_family(model.family))
    throw Error(ErrorCode::kInvalidArgument,
                std::string(family_name(model.family)) + " does not produce per-row predictions");
  return predict_prepared_rows(model, prepare_rows(model, trace.features));
}

double predict_sequence(const ModelArtifact& model, const Matrix& prepared_sequence) {
  const auto* net = std::get_if<RnnNet>(&model.net);
  if (net == nullptr) throw Error(ErrorCode::kInvalidArgument, "sequence prediction needs a recurrent model");
  if (static_cast<std::size_t>(prepared_sequence.rows()) != model.rnn.sequence_length)
    throw Error(ErrorCode::kWrongSequenceLength, "sequence has " + std::to_string(prepared_sequence.rows()) +
                                                     " rows, model expects " +
                                                     std::to_string(model.rnn.sequence_length));
  require_width(static_cast<std::size_t>(prepared_sequence.cols()), model.input_dim, "sequence");
  return rnn_infer(*net, prepared_sequence);
}

std::vector<double> predict_sequences(const ModelArtifact& model, const features::SequenceBatch& batch) {
  std::vector<double> out;
  out.reserve(batch.sequences.size());
  for (const auto& s : batch.sequences) out.push_back(predict_sequence(model, s));
  return out;
}

double conv_predict_windows(const ModelArtifact& model, const features::RowWindows& windows) {
  const auto* net = std::get_if<ConvNet>(&model.net);
  if (net == nullptr) throw Error(ErrorCode::kInvalidArgument, "window prediction needs a conv model");
  const auto channels = static_cast<Eigen::Index>(net->branches[0].filters());
  Matrix pooled(1, channels * static_cast<Eigen::Index>(kBranchCount));
  for (std::size_t bi = 0; bi < kBranchCount; ++bi) {
    Cache c;
    pooled.middleCols(static_cast<Eigen::Index>(bi) * channels, channels) =
        net->pool.forward(net->branches[bi].infer(windows[bi]), c);
  }
  HeadCaches hc;
  return head_forward(*net, pooled, hc, Mode::kInfer, nullptr)(0, 0);
}

double row_accuracy(const ModelArtifact& model, const std::vector<Trace>& traces, double cutoff) {
  std::size_t hits = 0;
  std::size_t total = 0;
  for (const auto& t : traces) {
    const auto p = predict_rows(model, t);
    for (std::size_t i = 0; i < p.size(); ++i) hits += static_cast<int>(p[i] > cutoff) == t.labels[i];
    total += p.size();
  }
  if (total == 0) throw Error(ErrorCode::kNoData, "no rows");
  return static_cast<double>(hits) / static_cast<double>(total);
}

double sequence_accuracy(const ModelArtifact& model, const std::vector<Trace>& traces, double cutoff) {
  const auto batch = features::chunk_sequences(prepare_traces(model, traces), model.rnn.sequence_length);
  if (batch.sequences.empty()) throw Error(ErrorCode::kNoSequences, "no complete sequences");
  const auto p = predict_sequences(model, batch);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < p.size(); ++i) hits += static_cast<int>(p[i] > cutoff) == batch.labels[i];
  return static_cast<double>(hits) / static_cast<double>(p.size());
}

// ---------------------------------------------------------------- gradient checks

double grad_check_mlp(ModelArtifact& model, const Matrix& rows, const std::vector<int>& labels, double h) {
  auto& net = std::get<MlpNet>(model.net);
  return nn::grad_check(
      model.params(), [&] { return mlp_objective(net, rows, labels, false); },
      [&] { mlp_objective(net, rows, labels, true); }, h);
}

double grad_check_conv(ModelArtifact& model, const features::RowWindows& windows, int label, double h) {
  auto& net = std::get<ConvNet>(model.net);
  const std::uint64_t seed = derive_seed(model.seed, kProbeStream);
  auto run = [&](bool backward) {
    Rng rng(seed);
    return conv_window_objective(net, windows, label, backward, Mode::kTrain, &rng);
  };
  return nn::grad_check(model.params(), [&] { return run(false); }, [&] { run(true); }, h);
}

double grad_check_autoencoder(ModelArtifact& model, const Matrix& rows, double h) {
  auto& net = std::get<AutoencoderNet>(model.net);
  return nn::grad_check(
      model.params(), [&] { return autoencoder_objective(net, rows, false); },
      [&] { autoencoder_objective(net, rows, true); }, h);
}

double grad_check_rnn(ModelArtifact& model, const Matrix& sequence, int label, double h) {
  auto& net = std::get<RnnNet>(model.net);
  const std::vector<const Matrix*> seqs{&sequence};
  const std::vector<int> y{label};
  return nn::grad_check(
      model.params(), [&] { return rnn_objective(net, seqs, y, false); }, [&] { rnn_objective(net, seqs, y, true); },
      h);
}

}  // namespace sidewatch::models
