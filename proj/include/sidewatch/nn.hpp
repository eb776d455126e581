// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "sidewatch/common.hpp"

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

namespace sidewatch::nn {

enum class Activation { kTanh, kSigmoid, kLinear };
std::string_view activation_name(Activation a);
Activation parse_activation(std::string_view name);

Matrix activate(Activation a, const Matrix& z);
/// Derivative of the activation expressed through its output y = act(z).
Matrix activation_derivative(Activation a, const Matrix& y);

enum class Mode { kTrain, kInfer };

struct Param {
  std::string name;
  Matrix value;
  Matrix grad;
  /// Bumped on every optimizer update; caches remember it to detect staleness.
  std::uint64_t version = 0;

  Param() = default;
  Param(std::string n, Eigen::Index rows, Eigen::Index cols)
      : name(std::move(n)), value(Matrix::Zero(rows, cols)), grad(Matrix::Zero(rows, cols)) {}
  void zero_grad() { grad.setZero(); }
  std::size_t size() const { return static_cast<std::size_t>(value.size()); }
};

struct Regularizer {
  double l1 = 0.0;
  double l2 = 0.0;
  double activity_l2 = 0.0;
};

enum class LayerKind {
  kDense,
  kConv1d,
  kGlobalMaxPool1d,
  kDropout,
  kRecurrentVanilla,
  kRecurrentLstm,
  kRecurrentGru,
  kBidirectional,
};
std::string_view layer_kind_name(LayerKind k);

enum class CellKind { kVanilla, kLstm, kGru };
std::string_view cell_name(CellKind c);
/// Gate blocks per cell: 1 (vanilla), 4 (LSTM: i, f, g, o), 3 (GRU: z, r, n).
std::size_t cell_gates(CellKind c);

/// Descriptive record of one layer, used for artifacts and inspection.
struct LayerSpec {
  LayerKind kind = LayerKind::kDense;
  std::size_t input = 0;
  std::size_t units = 0;  // dense units, conv filters, recurrent hidden size
  std::size_t kernel = 0;
  double rate = 0.0;
  Activation activation = Activation::kLinear;
  Regularizer reg;
  bool return_sequences = false;
  CellKind cell = CellKind::kVanilla;
  std::size_t parameters = 0;
};

/// Intermediates from a forward call, consumed by the matching backward call.
struct Cache {
  const void* owner = nullptr;
  std::uint64_t version = 0;
  Mode mode = Mode::kInfer;
  std::vector<Matrix> m;
  std::vector<Eigen::Index> idx;
  std::vector<Cache> children;
};

void glorot_uniform(Matrix& w, std::size_t fan_in, std::size_t fan_out, Rng& rng);

/// y = act(x W + b) over a batch of rows (B x input -> B x units).
/// The kernel regularizer gradient is added once per backward call; the activity
/// penalty is lambda * sum(y^2) / B so that it averages over the batch like the loss.
class Dense {
 public:
  Dense() = default;
  Dense(std::size_t input, std::size_t units, Activation activation, Regularizer reg = {});

  void init(Rng& rng);
  Matrix forward(const Matrix& x, Cache& cache, Mode mode = Mode::kInfer) const;
  Matrix infer(const Matrix& x) const;
  Matrix backward(const Cache& cache, const Matrix& dy);
  double activity_penalty(const Cache& cache) const;
  double weight_penalty() const;

  std::vector<Param*> params() { return {&kernel, &bias}; }
  std::vector<const Param*> params() const { return {&kernel, &bias}; }
  LayerSpec spec() const;
  std::size_t input() const { return input_; }
  std::size_t units() const { return units_; }

  Param kernel;  // input x units
  Param bias;    // 1 x units

 private:
  std::size_t input_ = 0;
  std::size_t units_ = 0;
  Activation activation_ = Activation::kLinear;
  Regularizer reg_;
};

/// Valid cross-correlation along time: (T x input) -> ((T-k+1) x filters).
/// Kernel row j*input+f holds the weight for lag j and input feature f.
class Conv1d {
 public:
  Conv1d() = default;
  Conv1d(std::size_t input, std::size_t filters, std::size_t kernel, Activation activation, Regularizer reg = {});

  void init(Rng& rng);
  Matrix forward(const Matrix& x, Cache& cache, Mode mode = Mode::kInfer) const;
  Matrix infer(const Matrix& x) const;
  Matrix backward(const Cache& cache, const Matrix& dy, bool need_input_grad = true);
  double weight_penalty() const;

  std::vector<Param*> params() { return {&kernel, &bias}; }
  std::vector<const Param*> params() const { return {&kernel, &bias}; }
  LayerSpec spec() const;
  std::size_t kernel_size() const { return kernel_size_; }
  std::size_t filters() const { return filters_; }

  Param kernel;  // (kernel * input) x filters
  Param bias;    // 1 x filters

 private:
  std::size_t input_ = 0;
  std::size_t filters_ = 0;
  std::size_t kernel_size_ = 0;
  Activation activation_ = Activation::kLinear;
  Regularizer reg_;
};

/// Per-column maximum over time: (P x C) -> (1 x C). Ties resolve to the earliest row.
class GlobalMaxPool1d {
 public:
  Matrix forward(const Matrix& x, Cache& cache, Mode mode = Mode::kInfer) const;
  Matrix backward(const Cache& cache, const Matrix& dy) const;
  std::vector<Param*> params() { return {}; }
  LayerSpec spec(std::size_t channels) const;
};

/// Inverted dropout: survivors are scaled by 1/(1-rate) in train mode; identity in infer mode.
class Dropout {
 public:
  Dropout() = default;
  explicit Dropout(double rate);

  Matrix forward(const Matrix& x, Cache& cache, Mode mode, Rng* rng) const;
  Matrix backward(const Cache& cache, const Matrix& dy) const;
  double rate() const { return rate_; }
  LayerSpec spec(std::size_t units) const;

 private:
  double rate_ = 0.0;
};

/// One direction of a recurrent layer over a (T x input) sequence. With
/// `return_sequences` the output is T x units (aligned to input time), otherwise the
/// final state 1 x units. A reversed layer consumes the sequence back to front and its
/// final state is the one reached after row 0.
class Recurrent {
 public:
  Recurrent() = default;
  Recurrent(CellKind cell, std::size_t input, std::size_t units, bool return_sequences, bool reverse = false,
            Activation activation = Activation::kTanh);

  void init(Rng& rng);
  Matrix forward(const Matrix& x, Cache& cache, Mode mode = Mode::kInfer) const;
  Matrix infer(const Matrix& x) const;
  Matrix backward(const Cache& cache, const Matrix& dy);

  std::vector<Param*> params() { return {&kernel, &recurrent, &bias}; }
  std::vector<const Param*> params() const { return {&kernel, &recurrent, &bias}; }
  LayerSpec spec() const;
  std::size_t units() const { return units_; }
  std::size_t output_width() const { return units_; }
  CellKind cell() const { return cell_; }

  Param kernel;     // input x gates*units
  Param recurrent;  // units x gates*units
  Param bias;       // 1 x gates*units

 private:
  CellKind cell_ = CellKind::kVanilla;
  std::size_t input_ = 0;
  std::size_t units_ = 0;
  bool return_sequences_ = false;
  bool reverse_ = false;
  Activation activation_ = Activation::kTanh;
};

/// Forward and reversed copies of a recurrent layer with outputs concatenated
/// feature-wise ([forward | backward]).
class Bidirectional {
 public:
  Bidirectional() = default;
  Bidirectional(CellKind cell, std::size_t input, std::size_t units, bool return_sequences,
                Activation activation = Activation::kTanh);

  void init(Rng& rng);
  Matrix forward(const Matrix& x, Cache& cache, Mode mode = Mode::kInfer) const;
  Matrix infer(const Matrix& x) const;
  Matrix backward(const Cache& cache, const Matrix& dy);

  std::vector<Param*> params();
  std::vector<const Param*> params() const;
  LayerSpec spec() const;
  std::size_t output_width() const { return 2 * forward_layer.units(); }

  Recurrent forward_layer;
  Recurrent backward_layer;
};

inline constexpr double kBceEpsilon = 1e-7;

struct ScalarLoss {
  double loss = 0.0;
  double grad = 0.0;  // dLoss/dp
};

/// Binary cross-entropy on a probability clamped to [eps, 1-eps]. The gradient is that
/// of the clamped loss, so it is zero when the clamp is active.
ScalarLoss bce_loss(double p, int y);

struct MatrixLoss {
  double loss = 0.0;
  Matrix grad;
};

/// Mean squared error over all elements.
MatrixLoss mse_loss(const Matrix& prediction, const Matrix& target);

/// Central-difference check. `compute_grads` must leave analytic gradients in each
/// param's `grad`; `loss` evaluates the objective at the current values. Returns
/// max |analytic - numeric| / max(1, |analytic|, |numeric|).
double grad_check(const std::vector<Param*>& params, const std::function<double()>& loss,
                  const std::function<void()>& compute_grads, double h = 1e-5);

std::size_t parameter_count(const std::vector<const Param*>& params);

}  // namespace sidewatch::nn
