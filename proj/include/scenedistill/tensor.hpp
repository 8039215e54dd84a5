#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

namespace scenedistill {

/// Dense row-major matrix of doubles. Used for batches (rows = samples) and
/// for every trainable array, including conv kernels flattened to
/// out_channels x (in_channels * kh * kw).
struct Tensor2 {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Tensor2() = default;
  Tensor2(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}
  Tensor2(std::size_t r, std::size_t c, std::vector<double> values) : rows(r), cols(c), data(std::move(values)) {
    if (data.size() != r * c) throw std::invalid_argument("Tensor2: data length does not match shape");
  }

  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

  std::span<double> row(std::size_t r) { return {data.data() + r * cols, cols}; }
  std::span<const double> row(std::size_t r) const { return {data.data() + r * cols, cols}; }

  std::size_t size() const { return data.size(); }
  bool same_shape(const Tensor2& o) const { return rows == o.rows && cols == o.cols; }
  void fill(double v) { std::fill(data.begin(), data.end(), v); }

  bool operator==(const Tensor2&) const = default;
};

/// out = a * b^T  (a: n x k, b: m x k) -> n x m
Tensor2 matmul_nt(const Tensor2& a, const Tensor2& b);
/// out = a * b  (a: n x k, b: k x m)
Tensor2 matmul(const Tensor2& a, const Tensor2& b);
/// out = a^T * b  (a: k x n, b: k x m) -> n x m
Tensor2 matmul_tn(const Tensor2& a, const Tensor2& b);

bool all_finite(const Tensor2& t);

}  // namespace scenedistill
