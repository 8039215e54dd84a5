#include "scenedistill/grad_check.hpp"

#include <algorithm>
#include <cmath>

namespace scenedistill {

GradCheckResult grad_check(const std::function<double(const ParamStore&)>& f, ParamStore& params,
                           const ParamStore& analytic_grad, double h) {
  if (!(h > 0.0)) throw std::invalid_argument("grad_check: step must be positive");
  GradCheckResult res;
  for (auto& [name, entry] : params.entries()) {
    if (entry.buffer) continue;
    const Tensor2& analytic = analytic_grad.at(name).grad;
    if (!analytic.same_shape(entry.value))
      throw std::invalid_argument("grad_check: gradient shape mismatch for '" + name + "'");
    for (std::size_t i = 0; i < entry.value.size(); ++i) {
      const double orig = entry.value.data[i];
      entry.value.data[i] = orig + h;
      const double fp = f(params);
      entry.value.data[i] = orig - h;
      const double fm = f(params);
      entry.value.data[i] = orig;
      if (!std::isfinite(fp) || !std::isfinite(fm))
        throw GradCheckError("grad_check: non-finite objective when perturbing " + name + "[" + std::to_string(i) +
                             "]");
      const double numeric = (fp - fm) / (2.0 * h);
      const double a = analytic.data[i];
      const double err = std::abs(a - numeric) / std::max({1.0, std::abs(a), std::abs(numeric)});
      ++res.coordinates;
      if (err > res.max_rel_error || res.coordinates == 1) {
        res.max_rel_error = err;
        res.worst_entry = name;
        res.worst_index = i;
        res.worst_analytic = a;
        res.worst_numeric = numeric;
      }
    }
  }
  return res;
}

}  // namespace scenedistill
