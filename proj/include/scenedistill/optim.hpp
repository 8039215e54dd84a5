#pragma once

#include <cstddef>
#include <map>
#include <stdexcept>
#include <string>

#include "scenedistill/param_store.hpp"

namespace scenedistill {

struct OptimConfig {
  double peak_lr = 0.008;
  double weight_decay = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::size_t epochs = 50;
  std::size_t warmup_epochs = 0;
  std::size_t batch_size = 2048;

  void validate() const;
};

/// Phase A of teacher fine-tuning: heads only on a frozen backbone.
OptimConfig teacher_head_optim_defaults();
/// Phase B: joint fine-tuning, cosine schedule with warmup.
OptimConfig teacher_joint_optim_defaults();
/// Student distillation (largest size variant).
OptimConfig distill_optim_defaults();

class NonFiniteGradientError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Decoupled-weight-decay Adam. Frozen and buffer entries are skipped.
class AdamW {
 public:
  explicit AdamW(const OptimConfig& cfg) : cfg_(cfg) {}

  /// One update of every trainable entry at learning rate `lr`. Throws
  /// NonFiniteGradientError naming the entry before touching anything.
  void step(ParamStore& params, double lr);
  std::size_t steps() const { return t_; }

 private:
  struct Moments {
    Tensor2 m, v;
  };
  OptimConfig cfg_;
  std::map<std::string, Moments, std::less<>> state_;
  std::size_t t_ = 0;
};

/// Per-epoch learning rate: linear warmup peak*(e+1)/warmup for
/// e < warmup, then half-cosine from peak towards 0 over the remaining
/// epochs.
double lr_at(std::size_t epoch, const OptimConfig& cfg);

}  // namespace scenedistill
