#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace scenedistill {

struct GradSuiteEntry {
  std::string name;
  std::size_t runs = 0;
  double max_rel_error = 0.0;
};

/// Central-difference check of every loss gradient (and the model
/// backward passes) on `seeds` random instances each.
std::vector<GradSuiteEntry> run_gradcheck_suite(std::size_t seeds = 20, double h = 1e-5, bool include_models = true);

}  // namespace scenedistill
