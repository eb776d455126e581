// SPDX-License-Identifier: Apache-2.0
#include "sidewatch/tensor.hpp"

#include "sidewatch/error.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

namespace sidewatch::nn {

std::size_t shape_size(const std::vector<std::size_t>& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

Tensor::Tensor(std::vector<std::size_t> s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
  if (shape_size(shape) != data.size()) {
    throw Error(ErrorCode::kShapeMismatch, "tensor data length " + std::to_string(data.size()) +
                                               " differs from shape product " + std::to_string(shape_size(shape)));
  }
}

Tensor Tensor::from_matrix(const Matrix& m) {
  std::vector<double> data(m.data(), m.data() + m.size());
  return Tensor({static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())}, std::move(data));
}

Matrix Tensor::to_matrix() const {
  Eigen::Index rows = 1;
  Eigen::Index cols = 0;
  if (shape.size() == 1) {
    cols = static_cast<Eigen::Index>(shape[0]);
  } else if (shape.size() == 2) {
    rows = static_cast<Eigen::Index>(shape[0]);
    cols = static_cast<Eigen::Index>(shape[1]);
  } else {
    throw Error(ErrorCode::kShapeMismatch, "only rank 1 and 2 tensors convert to matrices");
  }
  Matrix m(rows, cols);
  std::copy(data.begin(), data.end(), m.data());
  return m;
}

bool Tensor::all_finite() const {
  return std::all_of(data.begin(), data.end(), [](double v) { return std::isfinite(v); });
}

}  // namespace sidewatch::nn
