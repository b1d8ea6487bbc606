#pragma once

#include <cassert>
#include <cstddef>
#include <span>
#include <vector>

namespace emonet {

// Dense row-major matrix of doubles.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

  std::span<double> row(std::size_t r) { return {data.data() + r * cols, cols}; }
  std::span<const double> row(std::size_t r) const { return {data.data() + r * cols, cols}; }

  std::size_t size() const { return data.size(); }
  bool empty() const { return data.empty(); }

  friend bool operator==(const Matrix&, const Matrix&) = default;
};

// out = a * b, a is (n x k), b is (k x m).
Matrix matmul(const Matrix& a, const Matrix& b);

// Captured per-expert outputs: experts x frames x dim, row-major.
// Expert 0 is the convolutional extractor (plus positions), expert i >= 1 is
// transformer layer i.
struct EmbeddingStack {
  std::size_t experts = 0;
  std::size_t frames = 0;
  std::size_t dim = 0;
  std::vector<double> data;

  EmbeddingStack() = default;
  EmbeddingStack(std::size_t e, std::size_t t, std::size_t d)
      : experts(e), frames(t), dim(d), data(e * t * d, 0.0) {}

  double& at(std::size_t e, std::size_t t, std::size_t j) { return data[(e * frames + t) * dim + j]; }
  double at(std::size_t e, std::size_t t, std::size_t j) const {
    return data[(e * frames + t) * dim + j];
  }

  std::span<double> expert(std::size_t e) { return {data.data() + e * frames * dim, frames * dim}; }
  std::span<const double> expert(std::size_t e) const {
    return {data.data() + e * frames * dim, frames * dim};
  }

  Matrix expert_matrix(std::size_t e) const {
    Matrix m(frames, dim);
    const auto src = expert(e);
    m.data.assign(src.begin(), src.end());
    return m;
  }

  friend bool operator==(const EmbeddingStack&, const EmbeddingStack&) = default;
};

}  // namespace emonet
