#include "scenedistill/losses.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

#include "scenedistill/numerics.hpp"

namespace scenedistill {

namespace {
constexpr double kMinPositiveMass = 1e-12;
}

void LossConfig::validate() const {
  if (!(tau_supcon > 0.0 && tau_kd > 0.0 && tau_crd > 0.0))
    throw std::invalid_argument("losses: temperatures must be positive");
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw std::invalid_argument("losses: lambda must be in [0, 1]");
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw std::invalid_argument("losses: alpha must be in [0, 1]");
  if (!(beta >= 0.0)) throw std::invalid_argument("losses: beta must be >= 0");
  if (!(gamma > 0.0)) throw std::invalid_argument("losses: gamma must be positive");
}

Tensor2 similarity_weights(const Tensor2& labels) { return matmul_nt(labels, labels); }

Tensor2 one_hot(const std::vector<std::size_t>& classes, std::size_t num_classes) {
  Tensor2 y(classes.size(), num_classes);
  for (std::size_t i = 0; i < classes.size(); ++i) {
    if (classes[i] >= num_classes) throw std::out_of_range("one_hot: class id out of range");
    y(i, classes[i]) = 1.0;
  }
  return y;
}

SupConResult soft_supcon_from_similarities(const Tensor2& sim, const Tensor2& weights) {
  const std::size_t b = sim.rows;
  if (b < 2 || sim.cols != b) throw std::invalid_argument("soft_supcon: need a square similarity matrix with B >= 2");
  if (!weights.same_shape(sim)) throw std::invalid_argument("soft_supcon: weight matrix shape mismatch");

  SupConResult res;
  res.grad = Tensor2(b, b);
  std::vector<double> log_num(b), log_den(b);
  std::vector<char> included(b, 0);
  std::vector<double> den_terms, num_terms;
  double total = 0.0;
  for (std::size_t i = 0; i < b; ++i) {
    double mass = 0.0;
    den_terms.clear();
    num_terms.clear();
    for (std::size_t k = 0; k < b; ++k) {
      if (k == i) continue;
      den_terms.push_back(sim(i, k));
      const double w = weights(i, k);
      if (w > 0.0) {
        mass += w;
        num_terms.push_back(sim(i, k) + std::log(w));
      }
    }
    if (mass < kMinPositiveMass) {
      ++res.excluded;
      continue;
    }
    included[i] = 1;
    log_num[i] = log_sum_exp(num_terms);
    log_den[i] = log_sum_exp(den_terms);
    total += log_den[i] - log_num[i];
  }
  const std::size_t n_incl = b - res.excluded;
  if (n_incl == 0) {
    res.all_excluded = true;
    return res;
  }
  res.loss = total / static_cast<double>(n_incl);
  const double scale = 1.0 / static_cast<double>(n_incl);
  for (std::size_t i = 0; i < b; ++i) {
    if (!included[i]) continue;
    for (std::size_t k = 0; k < b; ++k) {
      if (k == i) continue;
      const double q = std::exp(sim(i, k) - log_den[i]);
      const double w = weights(i, k);
      const double p = w > 0.0 ? w * std::exp(sim(i, k) - log_num[i]) : 0.0;
      res.grad(i, k) = scale * (q - p);
    }
  }
  return res;
}

SupConResult soft_supcon_loss(const Tensor2& z, const Tensor2& weights, double tau) {
  if (z.rows < 2) throw std::invalid_argument("soft_supcon_loss: need B >= 2");
  if (!(tau > 0.0)) throw std::invalid_argument("soft_supcon_loss: tau must be positive");
  const auto zn = normalize_rows(z);
  Tensor2 sim = matmul_nt(zn.unit, zn.unit);
  for (double& v : sim.data) v /= tau;
  SupConResult res = soft_supcon_from_similarities(sim, weights);
  // ds_ik / du_i = u_k / tau and ds_ik / du_k = u_i / tau.
  Tensor2 g_sym(z.rows, z.rows);
  for (std::size_t i = 0; i < z.rows; ++i)
    for (std::size_t k = 0; k < z.rows; ++k) g_sym(i, k) = (res.grad(i, k) + res.grad(k, i)) / tau;
  res.grad = normalize_rows_backward(zn, matmul(g_sym, zn.unit));
  return res;
}

LossGrad cross_entropy_soft(const Tensor2& logits, const Tensor2& labels) {
  if (!logits.same_shape(labels)) throw std::invalid_argument("cross_entropy_soft: shape mismatch");
  LossGrad out{0.0, Tensor2(logits.rows, logits.cols)};
  const double inv_b = 1.0 / static_cast<double>(logits.rows);
  for (std::size_t i = 0; i < logits.rows; ++i) {
    const double lse = log_sum_exp(logits.row(i));
    for (std::size_t c = 0; c < logits.cols; ++c) {
      const double y = labels(i, c);
      const double log_p = logits(i, c) - lse;
      if (y != 0.0) out.loss -= y * log_p;
      out.grad(i, c) = (std::exp(log_p) - y) * inv_b;
    }
  }
  out.loss *= inv_b;
  return out;
}

LossGrad kd_loss(const Tensor2& student_logits, const Tensor2& teacher_logits, double tau) {
  if (!student_logits.same_shape(teacher_logits)) throw std::invalid_argument("kd_loss: shape mismatch");
  if (!(tau > 0.0)) throw std::invalid_argument("kd_loss: tau must be positive");
  const std::size_t b = student_logits.rows, c = student_logits.cols;
  LossGrad out{0.0, Tensor2(b, c)};
  std::vector<double> s(c), t(c);
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t j = 0; j < c; ++j) {
      s[j] = student_logits(i, j) / tau;
      t[j] = teacher_logits(i, j) / tau;
    }
    const double lse_s = log_sum_exp(s), lse_t = log_sum_exp(t);
    double kl = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      const double log_p = t[j] - lse_t;
      const double log_r = s[j] - lse_s;
      const double p = std::exp(log_p);
      if (p > 0.0) kl += p * (log_p - log_r);
      // d/ds of tau^2 * KL = tau * (r - p)
      out.grad(i, j) = tau * (std::exp(log_r) - p) / static_cast<double>(b);
    }
    out.loss += kl;
  }
  out.loss *= tau * tau / static_cast<double>(b);
  return out;
}

CrdResult crd_loss(const Tensor2& q_teacher, const Tensor2& k_student, double tau) {
  if (!q_teacher.same_shape(k_student)) throw std::invalid_argument("crd_loss: shape mismatch");
  if (q_teacher.rows < 2) throw std::invalid_argument("crd_loss: need B >= 2");
  if (!(tau > 0.0)) throw std::invalid_argument("crd_loss: tau must be positive");
  const std::size_t b = q_teacher.rows;
  const auto qn = normalize_rows(q_teacher);
  const auto kn = normalize_rows(k_student);
  Tensor2 logits = matmul_nt(qn.unit, kn.unit);
  for (double& v : logits.data) v /= tau;

  CrdResult res;
  Tensor2 g(b, b);  // dL / dlogits
  for (std::size_t i = 0; i < b; ++i) {
    auto row = logits.row(i);
    const double lse = log_sum_exp(row);
    res.loss += lse - row[i];
    for (std::size_t j = 0; j < b; ++j) g(i, j) = (std::exp(row[j] - lse) - (i == j ? 1.0 : 0.0)) / static_cast<double>(b);
  }
  res.loss /= static_cast<double>(b);
  for (double& v : g.data) v /= tau;
  res.grad_teacher = normalize_rows_backward(qn, matmul(g, kn.unit));
  res.grad_student = normalize_rows_backward(kn, matmul_tn(g, qn.unit));
  return res;
}

FinetuneLoss finetune_loss(const Tensor2& logits_clean, const Tensor2& labels_clean, const Tensor2& z_aug,
                           const Tensor2& weights_aug, const LossConfig& cfg) {
  FinetuneLoss out;
  auto ce = cross_entropy_soft(logits_clean, labels_clean);
  out.ce = ce.loss;
  out.grad_logits = std::move(ce.grad);
  for (double& v : out.grad_logits.data) v *= cfg.lambda;
  out.grad_projection = Tensor2(z_aug.rows, z_aug.cols);
  if (cfg.lambda < 1.0) {
    auto sc = soft_supcon_loss(z_aug, weights_aug, cfg.tau_supcon);
    out.supcon = sc.loss;
    out.excluded = sc.excluded;
    out.grad_projection = std::move(sc.grad);
    for (double& v : out.grad_projection.data) v *= 1.0 - cfg.lambda;
  }
  out.total = cfg.lambda * out.ce + (1.0 - cfg.lambda) * out.supcon;
  return out;
}

DistillLoss distill_loss(const Tensor2& student_logits, const std::vector<std::size_t>& hard_labels,
                         const Tensor2& teacher_logits, const Tensor2& q_teacher, const Tensor2& k_student,
                         const LossConfig& cfg) {
  DistillLoss out;
  out.grad_student_logits = Tensor2(student_logits.rows, student_logits.cols);
  out.grad_student_projection = Tensor2(k_student.rows, k_student.cols);
  out.grad_teacher_projection = Tensor2(q_teacher.rows, q_teacher.cols);
  if (cfg.alpha > 0.0) {
    auto ce = cross_entropy_soft(student_logits, one_hot(hard_labels, student_logits.cols));
    out.ce = ce.loss;
    for (std::size_t i = 0; i < ce.grad.size(); ++i) out.grad_student_logits.data[i] += cfg.alpha * ce.grad.data[i];
  }
  if (cfg.alpha < 1.0) {
    auto kd = kd_loss(student_logits, teacher_logits, cfg.tau_kd);
    out.kd = kd.loss;
    for (std::size_t i = 0; i < kd.grad.size(); ++i)
      out.grad_student_logits.data[i] += (1.0 - cfg.alpha) * kd.grad.data[i];
  }
  if (cfg.beta > 0.0) {
    auto crd = crd_loss(q_teacher, k_student, cfg.tau_crd);
    out.crd = crd.loss;
    for (std::size_t i = 0; i < crd.grad_student.size(); ++i) {
      out.grad_student_projection.data[i] = cfg.beta * crd.grad_student.data[i];
      out.grad_teacher_projection.data[i] = cfg.beta * crd.grad_teacher.data[i];
    }
  }
  out.total = cfg.alpha * out.ce + (1.0 - cfg.alpha) * out.kd + cfg.beta * out.crd;
  return out;
}

}  // namespace scenedistill
