#include "scenedistill/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace scenedistill {

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double l2_norm(std::span<const double> v) { return std::sqrt(dot(v, v)); }

Normalized l2_normalize(std::span<const double> v, double eps) {
  if (v.empty()) throw std::invalid_argument("l2_normalize: empty vector");
  Normalized out;
  out.norm = l2_norm(v);
  out.v.assign(v.size(), 0.0);
  if (!(out.norm > eps)) {
    out.degenerate = true;
    return out;
  }
  for (std::size_t i = 0; i < v.size(); ++i) out.v[i] = v[i] / out.norm;
  return out;
}

double log_sum_exp(std::span<const double> xs) {
  if (xs.empty()) throw std::invalid_argument("log_sum_exp: empty input");
  const double m = *std::max_element(xs.begin(), xs.end());
  double s = 0.0;
  for (double x : xs) s += std::exp(x - m);
  return m + std::log(s);
}

void softmax_inplace(std::span<double> row) {
  const double m = *std::max_element(row.begin(), row.end());
  double s = 0.0;
  for (double& x : row) {
    x = std::exp(x - m);
    s += x;
  }
  for (double& x : row) x /= s;
}

RowNormalized normalize_rows(const Tensor2& x, double eps) {
  RowNormalized out{Tensor2(x.rows, x.cols), std::vector<double>(x.rows, 0.0), 0, eps};
  for (std::size_t r = 0; r < x.rows; ++r) {
    auto n = l2_normalize(x.row(r), eps);
    out.norms[r] = n.norm;
    if (n.degenerate) ++out.degenerate_rows;
    std::copy(n.v.begin(), n.v.end(), out.unit.row(r).begin());
  }
  return out;
}

Tensor2 normalize_rows_backward(const RowNormalized& fwd, const Tensor2& grad_unit) {
  Tensor2 g(grad_unit.rows, grad_unit.cols);
  for (std::size_t r = 0; r < g.rows; ++r) {
    const double n = fwd.norms[r];
    if (!(n > fwd.eps)) continue;
    auto u = fwd.unit.row(r);
    auto gu = grad_unit.row(r);
    const double proj = dot(u, gu);
    auto gr = g.row(r);
    for (std::size_t c = 0; c < g.cols; ++c) gr[c] = (gu[c] - u[c] * proj) / n;
  }
  return g;
}

}  // namespace scenedistill
