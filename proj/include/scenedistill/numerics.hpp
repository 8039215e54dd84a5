#pragma once

#include <span>
#include <vector>

#include "scenedistill/tensor.hpp"

namespace scenedistill {

inline constexpr double kNormEps = 1e-12;

struct Normalized {
  std::vector<double> v;
  double norm = 0.0;
  bool degenerate = false;
};

/// Unit-norm copy of v. When the norm is at most eps the zero vector is
/// returned with degenerate set.
Normalized l2_normalize(std::span<const double> v, double eps = kNormEps);

double dot(std::span<const double> a, std::span<const double> b);
double l2_norm(std::span<const double> v);

/// log(sum(exp(xs))) with max-shift. xs must be nonempty.
double log_sum_exp(std::span<const double> xs);

/// In-place softmax of a row, max-shifted.
void softmax_inplace(std::span<double> row);

/// Row-wise l2 normalization with cached norms for the backward pass.
struct RowNormalized {
  Tensor2 unit;
  std::vector<double> norms;
  std::size_t degenerate_rows = 0;
  double eps = kNormEps;
};
RowNormalized normalize_rows(const Tensor2& x, double eps = kNormEps);

/// Backprop through row normalization: given dL/d(unit), returns dL/dx.
/// Degenerate rows receive zero gradient.
Tensor2 normalize_rows_backward(const RowNormalized& fwd, const Tensor2& grad_unit);

}  // namespace scenedistill
