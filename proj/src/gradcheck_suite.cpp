#include "scenedistill/gradcheck_suite.hpp"

#include <algorithm>
#include <functional>

#include "scenedistill/grad_check.hpp"
#include "scenedistill/layers.hpp"
#include "scenedistill/losses.hpp"
#include "scenedistill/model.hpp"
#include "scenedistill/rng.hpp"

namespace scenedistill {

namespace {

Tensor2 random_tensor(std::size_t r, std::size_t c, RngStream& rng, double scale = 1.0) {
  Tensor2 t(r, c);
  for (double& v : t.data) v = scale * rng.normal();
  return t;
}

Tensor2 random_soft_labels(std::size_t b, std::size_t c, RngStream& rng) {
  Tensor2 y(b, c);
  for (std::size_t i = 0; i < b; ++i) {
    // Mixup-style: convex combination of two classes.
    const auto c1 = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(c) - 1));
    const auto c2 = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(c) - 1));
    const double lam = rng.uniform();
    y(i, c1) += lam;
    y(i, c2) += 1.0 - lam;
  }
  return y;
}

/// Checks d f / d x for a function of one tensor.
double check_tensor_fn(const Tensor2& x, const Tensor2& analytic, const std::function<double(const Tensor2&)>& f,
                       double h) {
  ParamStore p, g;
  p.add("x", x.rows, x.cols).value = x;
  g.add("x", x.rows, x.cols).grad = analytic;
  return grad_check([&](const ParamStore& s) { return f(s.value("x")); }, p, g, h).max_rel_error;
}

std::vector<MelSpectrogram> random_specs(std::size_t b, std::size_t f, std::size_t t, RngStream& rng) {
  std::vector<MelSpectrogram> out;
  for (std::size_t i = 0; i < b; ++i) {
    MelSpectrogram s(f, t);
    for (double& v : s.values) v = -40.0 + 15.0 * rng.normal();
    out.push_back(std::move(s));
  }
  return out;
}

double check_model(EncoderVariant variant, EmbeddingNorm norm, Pooling pooling, RngStream& rng, double h) {
  ModelConfig cfg;
  cfg.encoder = {variant, 8, 8, 6, 1, norm, -40.0, 0.05, pooling};
  cfg.head = {3, 6, 5.0};
  cfg.projection = {6, 6, 4};
  SceneModel model(cfg, rng);
  // Random biases so no unit sits exactly at the relu kink.
  for (auto& [name, e] : model.params().entries())
    if (!e.buffer && name.ends_with(".bias")) {
      for (double& v : e.value.data) v = 0.1 * rng.normal();
    }
  const auto specs = random_specs(4, 8, 8, rng);
  const Tensor2 y = random_soft_labels(4, 3, rng);
  const Tensor2 w = similarity_weights(y);
  const NormMode mode = norm == EmbeddingNorm::batch_norm ? NormMode::train : NormMode::eval;

  auto objective = [&](SceneModel& m, bool with_grad) {
    // Snapshot batch-norm running stats so repeated evaluations agree.
    ParamStore saved = m.params();
    auto f = m.forward(specs, {mode, true, true});
    auto loss = finetune_loss(f.logits, y, f.projection, w, LossConfig{0.5, 0.5, 0.02, 0.1, 2.0, 0.07, 5.0});
    if (with_grad) {
      m.params().zero_grad();
      m.backward(f, loss.grad_logits, loss.grad_projection);
    }
    for (auto& [name, e] : m.params().entries())
      if (e.buffer) e.value = saved.at(name).value;
    return loss.total;
  };
  objective(model, true);
  ParamStore analytic = model.params();
  return grad_check(
             [&](const ParamStore& s) {
               SceneModel probe(cfg, s);
               return objective(probe, false);
             },
             model.params(), analytic, h)
      .max_rel_error;
}

}  // namespace

std::vector<GradSuiteEntry> run_gradcheck_suite(std::size_t seeds, double h, bool include_models) {
  std::vector<GradSuiteEntry> out;
  auto record = [&out](const std::string& name, double err) {
    auto it = std::find_if(out.begin(), out.end(), [&](const auto& e) { return e.name == name; });
    if (it == out.end()) {
      out.push_back({name, 0, 0.0});
      it = out.end() - 1;
    }
    ++it->runs;
    it->max_rel_error = std::max(it->max_rel_error, err);
  };

  for (std::size_t seed = 0; seed < seeds; ++seed) {
    RngStream rng = RngStream(seed, 0).derive("gradcheck");
    const std::size_t b = 5, d = 4, c = 3;

    {  // soft SupCon wrt projections
      const Tensor2 z = random_tensor(b, d, rng);
      const Tensor2 w = similarity_weights(random_soft_labels(b, c, rng));
      const auto r = soft_supcon_loss(z, w, 0.2);
      record("soft_supcon", check_tensor_fn(z, r.grad, [&](const Tensor2& x) { return soft_supcon_loss(x, w, 0.2).loss; }, h));
    }
    {  // CE with soft targets
      const Tensor2 logits = random_tensor(b, c, rng, 3.0);
      const Tensor2 y = random_soft_labels(b, c, rng);
      const auto r = cross_entropy_soft(logits, y);
      record("cross_entropy", check_tensor_fn(logits, r.grad, [&](const Tensor2& x) { return cross_entropy_soft(x, y).loss; }, h));
    }
    {  // KD
      const Tensor2 s = random_tensor(b, c, rng, 3.0);
      const Tensor2 t = random_tensor(b, c, rng, 3.0);
      const auto r = kd_loss(s, t, 2.0);
      record("kd", check_tensor_fn(s, r.grad, [&](const Tensor2& x) { return kd_loss(x, t, 2.0).loss; }, h));
    }
    {  // CRD, both sides
      const Tensor2 q = random_tensor(b, d, rng);
      const Tensor2 k = random_tensor(b, d, rng);
      const auto r = crd_loss(q, k, 0.07);
      record("crd_student", check_tensor_fn(k, r.grad_student, [&](const Tensor2& x) { return crd_loss(q, x, 0.07).loss; }, h));
      record("crd_teacher", check_tensor_fn(q, r.grad_teacher, [&](const Tensor2& x) { return crd_loss(x, k, 0.07).loss; }, h));
    }
    {  // fine-tuning objective, both inputs
      const LossConfig cfg;
      const Tensor2 logits = random_tensor(b, c, rng, 3.0);
      const Tensor2 y = one_hot({0, 1, 2, 0, 1}, c);
      const Tensor2 z = random_tensor(b, d, rng);
      const Tensor2 w = similarity_weights(random_soft_labels(b, c, rng));
      const auto r = finetune_loss(logits, y, z, w, cfg);
      const double e1 = check_tensor_fn(logits, r.grad_logits, [&](const Tensor2& x) { return finetune_loss(x, y, z, w, cfg).total; }, h);
      const double e2 = check_tensor_fn(z, r.grad_projection, [&](const Tensor2& x) { return finetune_loss(logits, y, x, w, cfg).total; }, h);
      record("finetune_total", std::max(e1, e2));
    }
    {  // distillation objective, all inputs
      const LossConfig cfg;
      const std::vector<std::size_t> hard{0, 1, 2, 1, 0};
      const Tensor2 s = random_tensor(b, c, rng, 3.0);
      const Tensor2 t = random_tensor(b, c, rng, 3.0);
      const Tensor2 q = random_tensor(b, d, rng);
      const Tensor2 k = random_tensor(b, d, rng);
      const auto r = distill_loss(s, hard, t, q, k, cfg);
      const double e1 = check_tensor_fn(s, r.grad_student_logits, [&](const Tensor2& x) { return distill_loss(x, hard, t, q, k, cfg).total; }, h);
      const double e2 = check_tensor_fn(k, r.grad_student_projection, [&](const Tensor2& x) { return distill_loss(s, hard, t, q, x, cfg).total; }, h);
      const double e3 = check_tensor_fn(q, r.grad_teacher_projection, [&](const Tensor2& x) { return distill_loss(s, hard, t, x, k, cfg).total; }, h);
      record("distill_total", std::max({e1, e2, e3}));
    }
    {  // cosine head wrt embeddings and weights
      const Tensor2 x = random_tensor(b, d, rng);
      const Tensor2 wgt = random_tensor(c, d, rng);
      const Tensor2 up = random_tensor(b, c, rng);
      CosineHeadCache cache;
      cosine_head_forward(x, wgt, 56.0, &cache);
      Tensor2 gw(c, d);
      const Tensor2 gx = cosine_head_backward(up, cache, gw);
      auto proj = [&](const Tensor2& lg) { return dot(lg.data, up.data); };
      const double e1 = check_tensor_fn(x, gx, [&](const Tensor2& xx) { return proj(cosine_head_forward(xx, wgt, 56.0)); }, h);
      const double e2 = check_tensor_fn(wgt, gw, [&](const Tensor2& ww) { return proj(cosine_head_forward(x, ww, 56.0)); }, h);
      record("cosine_head", std::max(e1, e2));
    }
  }

  if (include_models) {
    const std::size_t model_seeds = std::max<std::size_t>(1, std::min<std::size_t>(seeds, 3));
    for (std::size_t seed = 0; seed < model_seeds; ++seed) {
      RngStream rng = RngStream(seed, 1).derive("gradcheck-model");
      record("model_teacher", check_model(EncoderVariant::teacher_toy, EmbeddingNorm::none, Pooling::global, rng, h));
      record("model_student_layer_norm", check_model(EncoderVariant::student_toy, EmbeddingNorm::layer_norm, Pooling::time, rng, h));
      record("model_student_batch_norm", check_model(EncoderVariant::student_toy, EmbeddingNorm::batch_norm, Pooling::time, rng, h));
    }
  }
  return out;
}

}  // namespace scenedistill
