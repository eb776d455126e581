// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <random>

namespace sidewatch {

// Time-major data: one row per time step (or per batch item), one column per feature.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVector = Eigen::Matrix<double, 1, Eigen::Dynamic>;

using Rng = std::mt19937_64;

/// Derives an independent stream seed from a base seed and a small tuple of indices.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b = 0);

}  // namespace sidewatch
