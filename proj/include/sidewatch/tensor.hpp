// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "sidewatch/common.hpp"

#include <cstddef>
#include <string>
#include <vector>

namespace sidewatch::nn {

/// Dense n-dimensional array in row-major order; the interchange form used by
/// model artifacts. Layer math works on `Matrix`.
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> data;

  Tensor() = default;
  Tensor(std::vector<std::size_t> shape, std::vector<double> data);

  static Tensor from_matrix(const Matrix& m);
  Matrix to_matrix() const;  // rank 1 -> 1 x n, rank 2 -> rows x cols

  std::size_t size() const { return data.size(); }
  bool all_finite() const;
  bool operator==(const Tensor&) const = default;
};

std::size_t shape_size(const std::vector<std::size_t>& shape);

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

}  // namespace sidewatch::nn
