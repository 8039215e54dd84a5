#include "scenedistill/optim.hpp"

#include <cmath>
#include <numbers>

namespace scenedistill {

void OptimConfig::validate() const {
  if (!(peak_lr > 0.0)) throw std::invalid_argument("optim: peak_lr must be positive");
  if (!(weight_decay >= 0.0)) throw std::invalid_argument("optim: weight_decay must be >= 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0))
    throw std::invalid_argument("optim: betas must be in [0, 1)");
  if (!(eps > 0.0)) throw std::invalid_argument("optim: eps must be positive");
  if (epochs > 0 && warmup_epochs >= epochs) throw std::invalid_argument("optim: warmup_epochs must be < epochs");
  if (batch_size < 2) throw std::invalid_argument("optim: batch_size must be >= 2");
}

OptimConfig teacher_head_optim_defaults() {
  OptimConfig c;
  c.peak_lr = 0.008;
  c.weight_decay = 1e-4;
  c.epochs = 50;
  c.warmup_epochs = 0;
  c.batch_size = 2048;
  return c;
}

OptimConfig teacher_joint_optim_defaults() {
  OptimConfig c;
  c.peak_lr = 1e-4;
  c.weight_decay = 1e-4;
  c.epochs = 30;
  c.warmup_epochs = 2;
  c.batch_size = 2048;
  return c;
}

OptimConfig distill_optim_defaults() {
  OptimConfig c;
  c.peak_lr = 0.01;
  c.weight_decay = 1e-4;
  c.epochs = 75;
  c.warmup_epochs = 7;
  c.batch_size = 2048;
  return c;
}

void AdamW::step(ParamStore& params, double lr) {
  for (const auto& [name, e] : params.entries()) {
    if (e.frozen || e.buffer) continue;
    for (double g : e.grad.data)
      if (!std::isfinite(g)) throw NonFiniteGradientError("non-finite gradient in '" + name + "'");
  }
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (auto& [name, e] : params.entries()) {
    if (e.frozen || e.buffer) continue;
    auto [it, fresh] = state_.try_emplace(name);
    if (fresh || !it->second.m.same_shape(e.value)) {
      it->second.m = Tensor2(e.value.rows, e.value.cols);
      it->second.v = Tensor2(e.value.rows, e.value.cols);
    }
    auto& m = it->second.m.data;
    auto& v = it->second.v.data;
    auto& p = e.value.data;
    const auto& g = e.grad.data;
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
      v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
      p[i] *= 1.0 - lr * cfg_.weight_decay;
      p[i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + cfg_.eps);
    }
  }
}

double lr_at(std::size_t epoch, const OptimConfig& cfg) {
  if (epoch >= cfg.epochs) throw std::out_of_range("lr_at: epoch out of range");
  if (epoch < cfg.warmup_epochs)
    return cfg.peak_lr * static_cast<double>(epoch + 1) / static_cast<double>(cfg.warmup_epochs);
  const double progress =
      static_cast<double>(epoch - cfg.warmup_epochs) / static_cast<double>(cfg.epochs - cfg.warmup_epochs);
  return 0.5 * cfg.peak_lr * (1.0 + std::cos(std::numbers::pi * progress));
}

}  // namespace scenedistill
