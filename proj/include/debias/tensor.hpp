#pragma once

#include <cstddef>
#include <vector>

#include <Eigen/Core>

namespace debias {

using Matrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<Matrix>;
using ConstMatrixMap = Eigen::Map<const Matrix>;

/// Dense float tensor of images in NCHW order.
struct Tensor4 {
  int n = 0, c = 0, h = 0, w = 0;
  std::vector<float> data;

  Tensor4() = default;
  Tensor4(int n_, int c_, int h_, int w_) : n(n_), c(c_), h(h_), w(w_), data(size_t(n_) * c_ * h_ * w_, 0.0f) {}

  std::size_t sample_size() const { return std::size_t(c) * h * w; }
  float* sample(int i) { return data.data() + std::size_t(i) * sample_size(); }
  const float* sample(int i) const { return data.data() + std::size_t(i) * sample_size(); }
  float& at(int ni, int ci, int y, int x) { return data[((std::size_t(ni) * c + ci) * h + y) * w + x]; }
  float at(int ni, int ci, int y, int x) const { return data[((std::size_t(ni) * c + ci) * h + y) * w + x]; }
};

}  // namespace debias
