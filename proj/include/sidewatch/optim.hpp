// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "sidewatch/nn.hpp"

#include <cstddef>
#include <cstdint>
#include <string_view>
#include <vector>

namespace sidewatch::nn {

enum class OptimizerKind { kAdam, kRmsprop };
std::string_view optimizer_name(OptimizerKind k);
OptimizerKind parse_optimizer(std::string_view name);

struct OptimizerSpec {
  OptimizerKind kind = OptimizerKind::kAdam;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_epsilon = 1e-8;
  double rho = 0.9;
  double rmsprop_epsilon = 1e-7;
  // Halve-on-plateau policy.
  double lr_factor = 0.5;
  std::size_t lr_patience = 10;
  double lr_floor = 1e-5;

  void validate() const;
};

class Optimizer {
 public:
  explicit Optimizer(OptimizerSpec spec);

  /// Applies one update to every parameter from its accumulated gradient.
  void step(const std::vector<Param*>& params);
  /// Reports the monitored loss for one evaluation; returns true if the rate was reduced.
  bool observe(double monitored_loss);

  double learning_rate() const { return lr_; }
  std::uint64_t steps() const { return steps_; }
  const OptimizerSpec& spec() const { return spec_; }

 private:
  OptimizerSpec spec_;
  double lr_;
  std::uint64_t steps_ = 0;
  std::vector<Matrix> first_;   // adam m
  std::vector<Matrix> second_;  // adam v / rmsprop accumulator
  double best_loss_;
  std::size_t wait_ = 0;
};

}  // namespace sidewatch::nn
