#pragma once

#include <cstddef>
#include <vector>

#include "scenedistill/tensor.hpp"

namespace scenedistill {

/// Weights for every training objective, with the published defaults.
struct LossConfig {
  double lambda = 0.25;      // CE share of the fine-tuning loss
  double tau_supcon = 0.2;   // soft SupCon temperature
  double alpha = 0.02;       // CE share of the distillation loss (KD gets 1 - alpha)
  double beta = 0.1;         // CRD weight
  double tau_kd = 2.0;
  double tau_crd = 0.07;
  double gamma = 56.0;       // cosine head scale

  void validate() const;
};

/// w[i][k] = y_i . y_k over soft-label rows.
Tensor2 similarity_weights(const Tensor2& labels);

/// Hard class ids -> one-hot rows.
Tensor2 one_hot(const std::vector<std::size_t>& classes, std::size_t num_classes);

struct SupConResult {
  double loss = 0.0;
  Tensor2 grad;                 // same shape as the input it was taken against
  std::size_t excluded = 0;     // anchors with no positive weight
  bool all_excluded = false;
};

/// Mixup-aware supervised contrastive loss on raw projections z (B x d).
/// Rows are l2-normalized here; s(i,k) = cos(z_i, z_k) / tau and
///   L = -mean_i log( sum_{k!=i} w_ik e^{s_ik} / sum_{m!=i} e^{s_im} )
/// over anchors whose positive mass sum_{k!=i} w_ik is at least 1e-12.
/// `grad` is dL/dz.
SupConResult soft_supcon_loss(const Tensor2& z, const Tensor2& weights, double tau);

/// Same objective taken directly on a B x B similarity matrix (diagonal
/// ignored); `grad` is dL/ds.
SupConResult soft_supcon_from_similarities(const Tensor2& sim, const Tensor2& weights);

struct LossGrad {
  double loss = 0.0;
  Tensor2 grad;
};

/// -mean_i sum_c y_ic log softmax(logits_i)_c; grad = (softmax - y) / B.
LossGrad cross_entropy_soft(const Tensor2& logits, const Tensor2& labels);

/// tau^2 * mean_i KL(softmax(t_i/tau) || softmax(s_i/tau)); grad wrt s only.
LossGrad kd_loss(const Tensor2& student_logits, const Tensor2& teacher_logits, double tau);

struct CrdResult {
  double loss = 0.0;
  Tensor2 grad_student;  // dL/dk (raw, pre-normalization)
  Tensor2 grad_teacher;  // dL/dq (raw, pre-normalization)
};

/// InfoNCE between teacher projections q and student projections k with
/// in-batch negatives; both sides l2-normalized here:
///   L = -mean_i log( e^{q_i.k_i/tau} / sum_j e^{q_i.k_j/tau} )
CrdResult crd_loss(const Tensor2& q_teacher, const Tensor2& k_student, double tau);

struct FinetuneLoss {
  double total = 0.0;
  double ce = 0.0;
  double supcon = 0.0;
  Tensor2 grad_logits;      // wrt clean-batch logits
  Tensor2 grad_projection;  // wrt augmented-batch projections
  std::size_t excluded = 0;
};

/// lambda * CE(clean logits) + (1 - lambda) * SoftSupCon(augmented projections).
/// When lambda == 1 the contrastive term is skipped entirely.
FinetuneLoss finetune_loss(const Tensor2& logits_clean, const Tensor2& labels_clean, const Tensor2& z_aug,
                           const Tensor2& weights_aug, const LossConfig& cfg);

struct DistillLoss {
  double total = 0.0;
  double ce = 0.0;
  double kd = 0.0;
  double crd = 0.0;
  Tensor2 grad_student_logits;
  Tensor2 grad_student_projection;
  Tensor2 grad_teacher_projection;
};

/// alpha * CE(hard) + (1 - alpha) * KD + beta * CRD. Terms with zero
/// weight are not evaluated.
DistillLoss distill_loss(const Tensor2& student_logits, const std::vector<std::size_t>& hard_labels,
                         const Tensor2& teacher_logits, const Tensor2& q_teacher, const Tensor2& k_student,
                         const LossConfig& cfg);

}  // namespace scenedistill
