// SPDX-License-Identifier: Apache-2.0
#include "sidewatch/optim.hpp"

#include "sidewatch/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace sidewatch::nn {

std::string_view optimizer_name(OptimizerKind k) { return k == OptimizerKind::kAdam ? "adam" : "rmsprop"; }

OptimizerKind parse_optimizer(std::string_view name) {
  if (name == "adam") return OptimizerKind::kAdam;
  if (name == "rmsprop") return OptimizerKind::kRmsprop;
  throw Error(ErrorCode::kBadConfig, "unknown optimizer '" + std::string(name) + "'");
}

void OptimizerSpec::validate() const {
  const auto open_unit = [](double v) { return v > 0.0 && v < 1.0; };
  if (!(learning_rate > 0.0)) throw Error(ErrorCode::kBadConfig, "learning rate must be positive");
  if (!open_unit(beta1) || !open_unit(beta2) || !open_unit(rho)) {
    throw Error(ErrorCode::kBadConfig, "beta1, beta2 and rho must lie in (0, 1)");
  }
  if (!(adam_epsilon > 0.0) || !(rmsprop_epsilon > 0.0)) throw Error(ErrorCode::kBadConfig, "epsilon must be positive");
  if (!open_unit(lr_factor)) throw Error(ErrorCode::kBadConfig, "lr factor must lie in (0, 1)");
  if (lr_patience == 0) throw Error(ErrorCode::kBadConfig, "lr patience must be >= 1");
}

Optimizer::Optimizer(OptimizerSpec spec)
    : spec_(spec), lr_(spec.learning_rate), best_loss_(std::numeric_limits<double>::infinity()) {
  spec_.validate();
}

void Optimizer::step(const std::vector<Param*>& params) {
  if (first_.empty() && second_.empty()) {
    for (const auto* p : params) {
      first_.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
      second_.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
    }
  }
  if (params.size() != second_.size()) throw Error(ErrorCode::kShapeMismatch, "parameter list changed between steps");
  for (std::size_t k = 0; k < params.size(); ++k) {
    const Param& p = *params[k];
    if (p.grad.rows() != p.value.rows() || p.grad.cols() != p.value.cols() ||
        p.value.rows() != second_[k].rows() || p.value.cols() != second_[k].cols()) {
      throw Error(ErrorCode::kShapeMismatch, "parameter '" + p.name + "' changed shape");
    }
  }

  ++steps_;
  const auto t = static_cast<double>(steps_);
  for (std::size_t k = 0; k < params.size(); ++k) {
    Param& p = *params[k];
    auto g = p.grad.array();
    if (spec_.kind == OptimizerKind::kAdam) {
      first_[k].array() = spec_.beta1 * first_[k].array() + (1.0 - spec_.beta1) * g;
      second_[k].array() = spec_.beta2 * second_[k].array() + (1.0 - spec_.beta2) * g.square();
      const double c1 = 1.0 - std::pow(spec_.beta1, t);
      const double c2 = 1.0 - std::pow(spec_.beta2, t);
      p.value.array() -= lr_ * (first_[k].array() / c1) / ((second_[k].array() / c2).sqrt() + spec_.adam_epsilon);
    } else {
      second_[k].array() = spec_.rho * second_[k].array() + (1.0 - spec_.rho) * g.square();
      p.value.array() -= lr_ * g / (second_[k].array().sqrt() + spec_.rmsprop_epsilon);
    }
    ++p.version;
  }
}

bool Optimizer::observe(double monitored_loss) {
  if (monitored_loss < best_loss_) {
    best_loss_ = monitored_loss;
    wait_ = 0;
    return false;
  }
  if (++wait_ < spec_.lr_patience) return false;
  wait_ = 0;
  const double reduced = std::max(lr_ * spec_.lr_factor, spec_.lr_floor);
  const bool changed = reduced < lr_;
  lr_ = reduced;
  return changed;
}

}  // namespace sidewatch::nn
