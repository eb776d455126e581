// SPDX-License-Identifier: Apache-2.0
#include "sidewatch/nn.hpp"

#include "sidewatch/error.hpp"

#include <algorithm>
#include <cmath>

namespace sidewatch::nn {
namespace {

using ConstStrided = Eigen::Map<const Matrix, 0, Eigen::OuterStride<>>;

std::uint64_t version_of(const std::vector<const Param*>& params) {
  std::uint64_t v = 0;
  for (const auto* p : params) v += p->version;
  return v;
}

void check_cache(const Cache& cache, const void* owner, std::uint64_t version) {
  if (cache.owner != owner) throw Error(ErrorCode::kStaleCache, "cache was produced by a different layer");
  if (cache.mode != Mode::kTrain) throw Error(ErrorCode::kStaleCache, "cache was produced in infer mode");
  if (cache.version != version) throw Error(ErrorCode::kStaleCache, "parameters changed since the forward pass");
}

void check_width(const Matrix& x, std::size_t expected, const char* what) {
  if (static_cast<std::size_t>(x.cols()) != expected) {
    throw Error(ErrorCode::kShapeMismatch, std::string(what) + " expects width " + std::to_string(expected) +
                                               ", got " + std::to_string(x.cols()));
  }
}

Matrix sigmoid(const Matrix& z) { return (1.0 / (1.0 + (-z.array()).exp())).matrix(); }

double weight_penalty_of(const Param& kernel, const Regularizer& reg) {
  double p = 0.0;
  if (reg.l1 != 0.0) p += reg.l1 * kernel.value.array().abs().sum();
  if (reg.l2 != 0.0) p += reg.l2 * kernel.value.array().square().sum();
  return p;
}

void add_weight_penalty_grad(Param& kernel, const Regularizer& reg) {
  if (reg.l1 != 0.0) kernel.grad.array() += reg.l1 * kernel.value.array().sign();
  if (reg.l2 != 0.0) kernel.grad.array() += 2.0 * reg.l2 * kernel.value.array();
}

// Rows shifted down by one with a zero first row: the previous hidden state per step.
Matrix shifted_down(const Matrix& h) {
  Matrix prev = Matrix::Zero(h.rows(), h.cols());
  if (h.rows() > 1) prev.bottomRows(h.rows() - 1) = h.topRows(h.rows() - 1);
  return prev;
}

Matrix reverse_rows(const Matrix& x) { return x.colwise().reverse(); }

}  // namespace

std::string_view activation_name(Activation a) {
  switch (a) {
    case Activation::kTanh: return "tanh";
    case Activation::kSigmoid: return "sigmoid";
    case Activation::kLinear: return "linear";
  }
  return "linear";
}

Activation parse_activation(std::string_view name) {
  if (name == "tanh") return Activation::kTanh;
  if (name == "sigmoid") return Activation::kSigmoid;
  if (name == "linear") return Activation::kLinear;
  throw Error(ErrorCode::kInvalidArgument, "unknown activation '" + std::string(name) + "'");
}

Matrix activate(Activation a, const Matrix& z) {
  switch (a) {
    case Activation::kTanh: return z.array().tanh().matrix();
    case Activation::kSigmoid: return sigmoid(z);
    case Activation::kLinear: return z;
  }
  return z;
}

Matrix activation_derivative(Activation a, const Matrix& y) {
  switch (a) {
    case Activation::kTanh: return (1.0 - y.array().square()).matrix();
    case Activation::kSigmoid: return (y.array() * (1.0 - y.array())).matrix();
    case Activation::kLinear: return Matrix::Ones(y.rows(), y.cols());
  }
  return Matrix::Ones(y.rows(), y.cols());
}

std::string_view layer_kind_name(LayerKind k) {
  switch (k) {
    case LayerKind::kDense: return "dense";
    case LayerKind::kConv1d: return "conv1d";
    case LayerKind::kGlobalMaxPool1d: return "global_max_pool1d";
    case LayerKind::kDropout: return "dropout";
    case LayerKind::kRecurrentVanilla: return "recurrent_vanilla";
    case LayerKind::kRecurrentLstm: return "recurrent_lstm";
    case LayerKind::kRecurrentGru: return "recurrent_gru";
    case LayerKind::kBidirectional: return "bidirectional_wrapper";
  }
  return "dense";
}

std::string_view cell_name(CellKind c) {
  switch (c) {
    case CellKind::kVanilla: return "vanilla";
    case CellKind::kLstm: return "lstm";
    case CellKind::kGru: return "gru";
  }
  return "vanilla";
}

std::size_t cell_gates(CellKind c) {
  switch (c) {
    case CellKind::kVanilla: return 1;
    case CellKind::kLstm: return 4;
    case CellKind::kGru: return 3;
  }
  return 1;
}

void glorot_uniform(Matrix& w, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-limit, limit);
  for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = dist(rng);
}

// ---------------------------------------------------------------------------- Dense

Dense::Dense(std::size_t input, std::size_t units, Activation activation, Regularizer reg)
    : kernel("kernel", static_cast<Eigen::Index>(input), static_cast<Eigen::Index>(units)),
      bias("bias", 1, static_cast<Eigen::Index>(units)),
      input_(input),
      units_(units),
      activation_(activation),
      reg_(reg) {
  if (input == 0 || units == 0) throw Error(ErrorCode::kBadShape, "dense layer needs nonzero input and units");
}

void Dense::init(Rng& rng) {
  glorot_uniform(kernel.value, input_, units_, rng);
  bias.value.setZero();
}

Matrix Dense::forward(const Matrix& x, Cache& cache, Mode mode) const {
  check_width(x, input_, "dense");
  Matrix z = x * kernel.value;
  z.rowwise() += bias.value.row(0);
  Matrix y = activate(activation_, z);
  cache = Cache{this, version_of(params()), mode, {x, y}, {}, {}};
  return y;
}

Matrix Dense::infer(const Matrix& x) const {
  Cache c;
  return forward(x, c, Mode::kInfer);
}

Matrix Dense::backward(const Cache& cache, const Matrix& dy) {
  check_cache(cache, this, version_of(std::as_const(*this).params()));
  const Matrix& x = cache.m[0];
  const Matrix& y = cache.m[1];
  if (dy.rows() != y.rows() || dy.cols() != y.cols()) throw Error(ErrorCode::kShapeMismatch, "dense upstream shape");
  Matrix upstream = dy;
  if (reg_.activity_l2 != 0.0) upstream += (2.0 * reg_.activity_l2 / static_cast<double>(y.rows())) * y;
  const Matrix dz = (upstream.array() * activation_derivative(activation_, y).array()).matrix();
  kernel.grad.noalias() += x.transpose() * dz;
  bias.grad += dz.colwise().sum();
  add_weight_penalty_grad(kernel, reg_);
  return dz * kernel.value.transpose();
}

double Dense::activity_penalty(const Cache& cache) const {
  if (reg_.activity_l2 == 0.0) return 0.0;
  const Matrix& y = cache.m[1];
  return reg_.activity_l2 * y.array().square().sum() / static_cast<double>(y.rows());
}

double Dense::weight_penalty() const { return weight_penalty_of(kernel, reg_); }

LayerSpec Dense::spec() const {
  LayerSpec s;
  s.kind = LayerKind::kDense;
  s.input = input_;
  s.units = units_;
  s.activation = activation_;
  s.reg = reg_;
  s.parameters = kernel.size() + bias.size();
  return s;
}

// ---------------------------------------------------------------------------- Conv1d

Conv1d::Conv1d(std::size_t input, std::size_t filters, std::size_t kernel_size, Activation activation,
               Regularizer reg)
    : kernel("kernel", static_cast<Eigen::Index>(kernel_size * input), static_cast<Eigen::Index>(filters)),
      bias("bias", 1, static_cast<Eigen::Index>(filters)),
      input_(input),
      filters_(filters),
      kernel_size_(kernel_size),
      activation_(activation),
      reg_(reg) {
  if (input == 0 || filters == 0 || kernel_size == 0) {
    throw Error(ErrorCode::kBadShape, "conv1d needs nonzero input, filters and kernel");
  }
}

void Conv1d::init(Rng& rng) {
  glorot_uniform(kernel.value, kernel_size_ * input_, kernel_size_ * filters_, rng);
  bias.value.setZero();
}

Matrix Conv1d::forward(const Matrix& x, Cache& cache, Mode mode) const {
  check_width(x, input_, "conv1d");
  if (static_cast<std::size_t>(x.rows()) < kernel_size_) {
    throw Error(ErrorCode::kKernelTooLong, "kernel " + std::to_string(kernel_size_) + " longer than input of " +
                                               std::to_string(x.rows()) + " steps");
  }
  const Eigen::Index positions = x.rows() - static_cast<Eigen::Index>(kernel_size_) + 1;
  const auto width = static_cast<Eigen::Index>(kernel_size_ * input_);
  // Consecutive rows are contiguous in row-major storage, so the im2col matrix is a
  // view with overlapping rows.
  const ConstStrided columns(x.data(), positions, width, Eigen::OuterStride<>(static_cast<Eigen::Index>(input_)));
  Matrix z(positions, static_cast<Eigen::Index>(filters_));
  z.noalias() = columns * kernel.value;
  z.rowwise() += bias.value.row(0);
  Matrix y = activate(activation_, z);
  cache = Cache{this, version_of(params()), mode, {x, y}, {}, {}};
  return y;
}

Matrix Conv1d::infer(const Matrix& x) const {
  Cache c;
  return forward(x, c, Mode::kInfer);
}

Matrix Conv1d::backward(const Cache& cache, const Matrix& dy, bool need_input_grad) {
  check_cache(cache, this, version_of(std::as_const(*this).params()));
  const Matrix& x = cache.m[0];
  const Matrix& y = cache.m[1];
  if (dy.rows() != y.rows() || dy.cols() != y.cols()) throw Error(ErrorCode::kShapeMismatch, "conv1d upstream shape");
  const Eigen::Index positions = y.rows();
  const auto width = static_cast<Eigen::Index>(kernel_size_ * input_);
  const ConstStrided columns(x.data(), positions, width, Eigen::OuterStride<>(static_cast<Eigen::Index>(input_)));
  Matrix upstream = dy;
  if (reg_.activity_l2 != 0.0) upstream += 2.0 * reg_.activity_l2 * y;
  const Matrix dz = (upstream.array() * activation_derivative(activation_, y).array()).matrix();
  kernel.grad.noalias() += columns.transpose() * dz;
  bias.grad += dz.colwise().sum();
  add_weight_penalty_grad(kernel, reg_);
  if (!need_input_grad) return {};

  const Matrix dcols = dz * kernel.value.transpose();
  Matrix dx = Matrix::Zero(x.rows(), x.cols());
  const auto in = static_cast<Eigen::Index>(input_);
  for (Eigen::Index p = 0; p < positions; ++p) {
    for (Eigen::Index j = 0; j < static_cast<Eigen::Index>(kernel_size_); ++j) {
      dx.row(p + j) += dcols.row(p).segment(j * in, in);
    }
  }
  return dx;
}

double Conv1d::weight_penalty() const { return weight_penalty_of(kernel, reg_); }

LayerSpec Conv1d::spec() const {
  LayerSpec s;
  s.kind = LayerKind::kConv1d;
  s.input = input_;
  s.units = filters_;
  s.kernel = kernel_size_;
  s.activation = activation_;
  s.reg = reg_;
  s.parameters = kernel.size() + bias.size();
  return s;
}

// ---------------------------------------------------------------------------- pooling / dropout

Matrix GlobalMaxPool1d::forward(const Matrix& x, Cache& cache, Mode mode) const {
  if (x.rows() < 1) throw Error(ErrorCode::kShapeMismatch, "global max pool over an empty sequence");
  Matrix out(1, x.cols());
  std::vector<Eigen::Index> arg(static_cast<std::size_t>(x.cols()));
  for (Eigen::Index c = 0; c < x.cols(); ++c) {
    Eigen::Index best = 0;
    for (Eigen::Index r = 1; r < x.rows(); ++r) {
      if (x(r, c) > x(best, c)) best = r;
    }
    arg[static_cast<std::size_t>(c)] = best;
    out(0, c) = x(best, c);
  }
  cache = Cache{this, 0, mode, {Matrix(x.rows(), x.cols())}, std::move(arg), {}};
  return out;
}

Matrix GlobalMaxPool1d::backward(const Cache& cache, const Matrix& dy) const {
  check_cache(cache, this, 0);
  const Matrix& shape = cache.m[0];
  if (dy.rows() != 1 || dy.cols() != shape.cols()) throw Error(ErrorCode::kShapeMismatch, "pool upstream shape");
  Matrix dx = Matrix::Zero(shape.rows(), shape.cols());
  for (Eigen::Index c = 0; c < shape.cols(); ++c) dx(cache.idx[static_cast<std::size_t>(c)], c) = dy(0, c);
  return dx;
}

LayerSpec GlobalMaxPool1d::spec(std::size_t channels) const {
  LayerSpec s;
  s.kind = LayerKind::kGlobalMaxPool1d;
  s.input = channels;
  s.units = channels;
  return s;
}

Dropout::Dropout(double rate) : rate_(rate) {
  if (!(rate >= 0.0 && rate < 1.0)) throw Error(ErrorCode::kBadShape, "dropout rate must lie in [0, 1)");
}

Matrix Dropout::forward(const Matrix& x, Cache& cache, Mode mode, Rng* rng) const {
  if (mode == Mode::kInfer || rate_ == 0.0) {
    cache = Cache{this, 0, mode, {Matrix::Ones(x.rows(), x.cols())}, {}, {}};
    return x;
  }
  if (rng == nullptr) throw Error(ErrorCode::kInvalidArgument, "train-mode dropout needs a random source");
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Matrix mask(x.rows(), x.cols());
  const double keep_scale = 1.0 / (1.0 - rate_);
  for (Eigen::Index i = 0; i < mask.size(); ++i) mask.data()[i] = u(*rng) < rate_ ? 0.0 : keep_scale;
  Matrix y = (x.array() * mask.array()).matrix();
  cache = Cache{this, 0, mode, {std::move(mask)}, {}, {}};
  return y;
}

Matrix Dropout::backward(const Cache& cache, const Matrix& dy) const {
  check_cache(cache, this, 0);
  return (dy.array() * cache.m[0].array()).matrix();
}

LayerSpec Dropout::spec(std::size_t units) const {
  LayerSpec s;
  s.kind = LayerKind::kDropout;
  s.input = units;
  s.units = units;
  s.rate = rate_;
  return s;
}

// ---------------------------------------------------------------------------- recurrent

Recurrent::Recurrent(CellKind cell, std::size_t input, std::size_t units, bool return_sequences, bool reverse,
                     Activation activation)
    : cell_(cell),
      input_(input),
      units_(units),
      return_sequences_(return_sequences),
      reverse_(reverse),
      activation_(activation) {
  if (input == 0 || units == 0) throw Error(ErrorCode::kBadShape, "recurrent layer needs nonzero input and units");
  const auto g = static_cast<Eigen::Index>(cell_gates(cell) * units);
  kernel = Param("kernel", static_cast<Eigen::Index>(input), g);
  recurrent = Param("recurrent", static_cast<Eigen::Index>(units), g);
  bias = Param("bias", 1, g);
}

void Recurrent::init(Rng& rng) {
  const std::size_t g = cell_gates(cell_) * units_;
  glorot_uniform(kernel.value, input_, g, rng);
  glorot_uniform(recurrent.value, units_, g, rng);
  bias.value.setZero();
}

Matrix Recurrent::forward(const Matrix& x_in, Cache& cache, Mode mode) const {
  check_width(x_in, input_, "recurrent");
  if (x_in.rows() < 1) throw Error(ErrorCode::kShapeMismatch, "recurrent layer over an empty sequence");
  const Matrix x = reverse_ ? reverse_rows(x_in) : x_in;
  const Eigen::Index steps = x.rows();
  const auto h = static_cast<Eigen::Index>(units_);
  Matrix pre = x * kernel.value;
  pre.rowwise() += bias.value.row(0);

  Matrix hs(steps, h);
  Matrix gates(steps, pre.cols());
  Matrix cells;
  RowVector h_prev = RowVector::Zero(h);

  switch (cell_) {
    case CellKind::kVanilla: {
      for (Eigen::Index t = 0; t < steps; ++t) {
        const Matrix a = pre.row(t) + h_prev * recurrent.value;
        hs.row(t) = activate(activation_, a);
        h_prev = hs.row(t);
      }
      gates = hs;
      break;
    }
    case CellKind::kLstm: {
      cells.resize(steps, h);
      RowVector c_prev = RowVector::Zero(h);
      for (Eigen::Index t = 0; t < steps; ++t) {
        const Matrix z = pre.row(t) + h_prev * recurrent.value;
        const Matrix i = sigmoid(z.middleCols(0, h));
        const Matrix f = sigmoid(z.middleCols(h, h));
        const Matrix g = activate(activation_, z.middleCols(2 * h, h));
        const Matrix o = sigmoid(z.middleCols(3 * h, h));
        const RowVector c = (f.array() * c_prev.array() + i.array() * g.array()).matrix();
        const Matrix tc = activate(activation_, c);
        hs.row(t) = (o.array() * tc.array()).matrix();
        cells.row(t) = c;
        gates.row(t) << i, f, g, o;
        c_prev = c;
        h_prev = hs.row(t);
      }
      break;
    }
    case CellKind::kGru: {
      const auto u_zr = recurrent.value.leftCols(2 * h);
      const auto u_n = recurrent.value.rightCols(h);
      for (Eigen::Index t = 0; t < steps; ++t) {
        const Matrix hz = h_prev * u_zr;
        const Matrix z = sigmoid(pre.row(t).segment(0, h) + hz.middleCols(0, h));
        const Matrix r = sigmoid(pre.row(t).segment(h, h) + hz.middleCols(h, h));
        const RowVector rh = (r.array() * h_prev.array()).matrix();
        const Matrix n = activate(activation_, pre.row(t).segment(2 * h, h) + rh * u_n);
        hs.row(t) = (z.array() * h_prev.array() + (1.0 - z.array()) * n.array()).matrix();
        gates.row(t) << z, r, n;
        h_prev = hs.row(t);
      }
      break;
    }
  }

  cache = Cache{this, version_of(params()), mode, {x, hs, gates, cells}, {}, {}};
  if (return_sequences_) return reverse_ ? reverse_rows(hs) : hs;
  return hs.bottomRows(1);
}

Matrix Recurrent::infer(const Matrix& x) const {
  Cache c;
  return forward(x, c, Mode::kInfer);
}

Matrix Recurrent::backward(const Cache& cache, const Matrix& dy) {
  check_cache(cache, this, version_of(std::as_const(*this).params()));
  const Matrix& x = cache.m[0];
  const Matrix& hs = cache.m[1];
  const Matrix& gates = cache.m[2];
  const Matrix& cells = cache.m[3];
  const Eigen::Index steps = x.rows();
  const auto h = static_cast<Eigen::Index>(units_);

  Matrix dh_seq = Matrix::Zero(steps, h);
  if (return_sequences_) {
    if (dy.rows() != steps || dy.cols() != h) throw Error(ErrorCode::kShapeMismatch, "recurrent upstream shape");
    dh_seq = reverse_ ? reverse_rows(dy) : dy;
  } else {
    if (dy.rows() != 1 || dy.cols() != h) throw Error(ErrorCode::kShapeMismatch, "recurrent upstream shape");
    dh_seq.row(steps - 1) = dy.row(0);
  }

  const Matrix h_prev_all = shifted_down(hs);
  Matrix dpre(steps, gates.cols());
  RowVector dh_next = RowVector::Zero(h);

  switch (cell_) {
    case CellKind::kVanilla: {
      for (Eigen::Index t = steps - 1; t >= 0; --t) {
        const RowVector dh = dh_seq.row(t) + dh_next;
        const RowVector da = (dh.array() * activation_derivative(activation_, hs.row(t)).array()).matrix();
        dpre.row(t) = da;
        dh_next = da * recurrent.value.transpose();
      }
      recurrent.grad.noalias() += h_prev_all.transpose() * dpre;
      break;
    }
    case CellKind::kLstm: {
      RowVector dc_next = RowVector::Zero(h);
      for (Eigen::Index t = steps - 1; t >= 0; --t) {
        const auto i = gates.row(t).segment(0, h).array();
        const auto f = gates.row(t).segment(h, h).array();
        const auto g = gates.row(t).segment(2 * h, h).array();
        const auto o = gates.row(t).segment(3 * h, h).array();
        const Matrix tc = activate(activation_, cells.row(t));
        const RowVector c_prev = t > 0 ? RowVector(cells.row(t - 1)) : RowVector::Zero(h);
        const RowVector dh = dh_seq.row(t) + dh_next;
        const RowVector d_o = (dh.array() * tc.array()).matrix();
        const RowVector dc =
            dc_next + (dh.array() * o * activation_derivative(activation_, tc).array()).matrix();
        const RowVector di = (dc.array() * g).matrix();
        const RowVector dg = (dc.array() * i).matrix();
        const RowVector df = (dc.array() * c_prev.array()).matrix();
        dc_next = (dc.array() * f).matrix();
        dpre.row(t).segment(0, h) = (di.array() * i * (1.0 - i)).matrix();
        dpre.row(t).segment(h, h) = (df.array() * f * (1.0 - f)).matrix();
        dpre.row(t).segment(2 * h, h) =
            (dg.array() * activation_derivative(activation_, gates.row(t).segment(2 * h, h)).array()).matrix();
        dpre.row(t).segment(3 * h, h) = (d_o.array() * o * (1.0 - o)).matrix();
        dh_next = dpre.row(t) * recurrent.value.transpose();
      }
      recurrent.grad.noalias() += h_prev_all.transpose() * dpre;
      break;
    }
    case CellKind::kGru: {
      const Matrix u_zr = recurrent.value.leftCols(2 * h);
      const Matrix u_n = recurrent.value.rightCols(h);
      Matrix rh_all(steps, h);
      for (Eigen::Index t = steps - 1; t >= 0; --t) {
        const auto z = gates.row(t).segment(0, h).array();
        const auto r = gates.row(t).segment(h, h).array();
        const RowVector n = gates.row(t).segment(2 * h, h);
        const RowVector h_prev = h_prev_all.row(t);
        const RowVector dh = dh_seq.row(t) + dh_next;
        const RowVector dz = (dh.array() * (h_prev.array() - n.array())).matrix();
        const RowVector dn = (dh.array() * (1.0 - z)).matrix();
        RowVector dh_prev = (dh.array() * z).matrix();
        const RowVector dan = (dn.array() * activation_derivative(activation_, n).array()).matrix();
        const RowVector drh = dan * u_n.transpose();
        rh_all.row(t) = (r * h_prev.array()).matrix();
        const RowVector dr = (drh.array() * h_prev.array()).matrix();
        dh_prev += (drh.array() * r).matrix();
        dpre.row(t).segment(0, h) = (dz.array() * z * (1.0 - z)).matrix();
        dpre.row(t).segment(h, h) = (dr.array() * r * (1.0 - r)).matrix();
        dpre.row(t).segment(2 * h, h) = dan;
        dh_prev += dpre.row(t).segment(0, 2 * h) * u_zr.transpose();
        dh_next = dh_prev;
      }
      recurrent.grad.leftCols(2 * h).noalias() += h_prev_all.transpose() * dpre.leftCols(2 * h);
      recurrent.grad.rightCols(h).noalias() += rh_all.transpose() * dpre.rightCols(h);
      break;
    }
  }

  kernel.grad.noalias() += x.transpose() * dpre;
  bias.grad += dpre.colwise().sum();
  Matrix dx = dpre * kernel.value.transpose();
  return reverse_ ? reverse_rows(dx) : dx;
}

LayerSpec Recurrent::spec() const {
  LayerSpec s;
  switch (cell_) {
    case CellKind::kVanilla: s.kind = LayerKind::kRecurrentVanilla; break;
    case CellKind::kLstm: s.kind = LayerKind::kRecurrentLstm; break;
    case CellKind::kGru: s.kind = LayerKind::kRecurrentGru; break;
  }
  s.input = input_;
  s.units = units_;
  s.activation = activation_;
  s.return_sequences = return_sequences_;
  s.cell = cell_;
  s.parameters = kernel.size() + recurrent.size() + bias.size();
  return s;
}

Bidirectional::Bidirectional(CellKind cell, std::size_t input, std::size_t units, bool return_sequences,
                             Activation activation)
    : forward_layer(cell, input, units, return_sequences, false, activation),
      backward_layer(cell, input, units, return_sequences, true, activation) {}

void Bidirectional::init(Rng& rng) {
  forward_layer.init(rng);
  backward_layer.init(rng);
}

Matrix Bidirectional::forward(const Matrix& x, Cache& cache, Mode mode) const {
  cache = Cache{this, 0, mode, {}, {}, std::vector<Cache>(2)};
  const Matrix f = forward_layer.forward(x, cache.children[0], mode);
  const Matrix b = backward_layer.forward(x, cache.children[1], mode);
  Matrix out(f.rows(), f.cols() + b.cols());
  out << f, b;
  return out;
}

Matrix Bidirectional::infer(const Matrix& x) const {
  Cache c;
  return forward(x, c, Mode::kInfer);
}

Matrix Bidirectional::backward(const Cache& cache, const Matrix& dy) {
  check_cache(cache, this, 0);
  const auto h = static_cast<Eigen::Index>(forward_layer.units());
  if (dy.cols() != 2 * h) throw Error(ErrorCode::kShapeMismatch, "bidirectional upstream shape");
  Matrix dx = forward_layer.backward(cache.children[0], dy.leftCols(h));
  dx += backward_layer.backward(cache.children[1], dy.rightCols(h));
  return dx;
}

std::vector<Param*> Bidirectional::params() {
  auto p = forward_layer.params();
  for (auto* q : backward_layer.params()) p.push_back(q);
  return p;
}

std::vector<const Param*> Bidirectional::params() const {
  auto p = forward_layer.params();
  for (const auto* q : backward_layer.params()) p.push_back(q);
  return p;
}

LayerSpec Bidirectional::spec() const {
  LayerSpec s = forward_layer.spec();
  s.kind = LayerKind::kBidirectional;
  s.parameters *= 2;
  return s;
}

// ---------------------------------------------------------------------------- losses

ScalarLoss bce_loss(double p, int y) {
  const bool clamped = !(p >= kBceEpsilon && p <= 1.0 - kBceEpsilon);
  const double q = std::clamp(p, kBceEpsilon, 1.0 - kBceEpsilon);
  ScalarLoss out;
  out.loss = y == 1 ? -std::log(q) : -std::log(1.0 - q);
  out.grad = clamped ? 0.0 : (y == 1 ? -1.0 / q : 1.0 / (1.0 - q));
  return out;
}

MatrixLoss mse_loss(const Matrix& prediction, const Matrix& target) {
  if (prediction.rows() != target.rows() || prediction.cols() != target.cols()) {
    throw Error(ErrorCode::kShapeMismatch, "mse operands differ in shape");
  }
  const Matrix diff = prediction - target;
  const auto n = static_cast<double>(diff.size());
  return {diff.array().square().sum() / n, (2.0 / n) * diff};
}

double grad_check(const std::vector<Param*>& params, const std::function<double()>& loss,
                  const std::function<void()>& compute_grads, double h) {
  for (auto* p : params) p->zero_grad();
  compute_grads();
  double worst = 0.0;
  for (auto* p : params) {
    const Matrix analytic = p->grad;
    for (Eigen::Index i = 0; i < p->value.size(); ++i) {
      double& w = p->value.data()[i];
      const double saved = w;
      w = saved + h;
      const double up = loss();
      w = saved - h;
      const double down = loss();
      w = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double a = analytic.data()[i];
      const double err = std::abs(a - numeric) / std::max({1.0, std::abs(a), std::abs(numeric)});
      worst = std::max(worst, err);
    }
  }
  return worst;
}

std::size_t parameter_count(const std::vector<const Param*>& params) {
  std::size_t n = 0;
  for (const auto* p : params) n += p->size();
  return n;
}

}  // namespace sidewatch::nn
