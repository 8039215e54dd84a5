#pragma once

#include <functional>
#include <stdexcept>
#include <string>

#include "scenedistill/param_store.hpp"

namespace scenedistill {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_entry;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t coordinates = 0;
};

class GradCheckError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Compares analytic gradients against central differences over every
/// non-buffer coordinate of `params`:
///   max |a - n| / max(1, |a|, |n|)
/// `params` is perturbed in place and restored. A non-finite f evaluation
/// throws GradCheckError naming the coordinate.
GradCheckResult grad_check(const std::function<double(const ParamStore&)>& f, ParamStore& params,
                           const ParamStore& analytic_grad, double h = 1e-5);

}  // namespace scenedistill
