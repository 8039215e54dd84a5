#include "scenedistill/tensor.hpp"

#include <cmath>

namespace scenedistill {

Tensor2 matmul_nt(const Tensor2& a, const Tensor2& b) {
  if (a.cols != b.cols) throw std::invalid_argument("matmul_nt: inner dimension mismatch");
  Tensor2 out(a.rows, b.rows);
  for (std::size_t i = 0; i < a.rows; ++i) {
    const double* ai = a.data.data() + i * a.cols;
    for (std::size_t j = 0; j < b.rows; ++j) {
      const double* bj = b.data.data() + j * b.cols;
      double s = 0.0;
      for (std::size_t k = 0; k < a.cols; ++k) s += ai[k] * bj[k];
      out(i, j) = s;
    }
  }
  return out;
}

Tensor2 matmul(const Tensor2& a, const Tensor2& b) {
  if (a.cols != b.rows) throw std::invalid_argument("matmul: inner dimension mismatch");
  Tensor2 out(a.rows, b.cols);
  for (std::size_t i = 0; i < a.rows; ++i) {
    double* oi = out.data.data() + i * out.cols;
    for (std::size_t k = 0; k < a.cols; ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      const double* bk = b.data.data() + k * b.cols;
      for (std::size_t j = 0; j < b.cols; ++j) oi[j] += aik * bk[j];
    }
  }
  return out;
}

Tensor2 matmul_tn(const Tensor2& a, const Tensor2& b) {
  if (a.rows != b.rows) throw std::invalid_argument("matmul_tn: inner dimension mismatch");
  Tensor2 out(a.cols, b.cols);
  for (std::size_t k = 0; k < a.rows; ++k) {
    const double* ak = a.data.data() + k * a.cols;
    const double* bk = b.data.data() + k * b.cols;
    for (std::size_t i = 0; i < a.cols; ++i) {
      const double aki = ak[i];
      if (aki == 0.0) continue;
      double* oi = out.data.data() + i * out.cols;
      for (std::size_t j = 0; j < b.cols; ++j) oi[j] += aki * bk[j];
    }
  }
  return out;
}

bool all_finite(const Tensor2& t) {
  for (double v : t.data)
    if (!std::isfinite(v)) return false;
  return true;
}

}  // namespace scenedistill
