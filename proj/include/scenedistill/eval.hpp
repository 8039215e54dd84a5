#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "scenedistill/data.hpp"
#include "scenedistill/model.hpp"
#include "scenedistill/rng.hpp"
#include "scenedistill/tensor.hpp"

namespace scenedistill {

enum class EmbeddingTap { backbone, pre_layernorm };

/// pre_layernorm when the encoder has an embedding norm, else backbone.
EmbeddingTap default_tap(const ModelConfig& cfg);

struct LabeledEmbeddings {
  Tensor2 x;
  std::vector<std::size_t> labels;
};

/// Eval-mode embeddings. `backbone` is the vector the cosine head sees;
/// `pre_layernorm` is the pooled vector before the embedding norm and is a
/// configuration error on encoders without one.
LabeledEmbeddings extract_embeddings(const SceneModel& model, const std::vector<Sample>& samples, EmbeddingTap tap,
                                     std::size_t batch_size = 256);

/// Fraction of samples whose cosine-head argmax equals the label.
double closed_set_accuracy(const SceneModel& model, const std::vector<Sample>& samples, std::size_t batch_size = 256);

struct ProbeConfig {
  double l2 = 1e-3;
  std::size_t max_iters = 5000;
  double tol = 1e-7;
};

/// Multinomial logistic regression, W: C x d plus an unregularized bias.
struct LogisticProbe {
  Tensor2 weight;
  std::vector<double> bias;
  std::size_t iterations = 0;
  double objective = 0.0;
  double grad_norm = 0.0;

  std::vector<std::size_t> predict(const Tensor2& x) const;
};

/// mean CE + l2/2 ||W||^2 at (weight, bias); gradient optional.
double probe_objective(const Tensor2& x, const std::vector<std::size_t>& labels, const Tensor2& weight,
                       const std::vector<double>& bias, double l2, Tensor2* grad_w = nullptr,
                       std::vector<double>* grad_b = nullptr);

/// Full-batch gradient descent with Armijo backtracking from a zero start.
LogisticProbe fit_probe(const Tensor2& x, const std::vector<std::size_t>& labels, std::size_t num_classes,
                        const ProbeConfig& cfg);

struct SplitAccuracy {
  std::optional<double> seen;
  std::optional<double> unseen;
};

/// Accuracy over seen-class items and unseen-class items separately; an
/// empty subset yields an absent field.
SplitAccuracy seen_unseen_split_report(const std::vector<std::size_t>& predicted, const std::vector<std::size_t>& truth,
                                       const std::vector<bool>& class_is_seen);

struct FewShotConfig {
  std::size_t k = 5;
  std::size_t repetitions = 50;
  ProbeConfig probe;
};

struct FewShotResult {
  std::size_t k = 0;
  double mean = 0.0;
  double std = 0.0;
  std::vector<double> accuracies;
  std::optional<double> seen_mean;
  std::optional<double> unseen_mean;
};

/// R repetitions, each on stream rng.derive(r): K samples per class drawn
/// without replacement from the pool, probe fit, scored on the full test set.
FewShotResult fewshot_protocol(const LabeledEmbeddings& pool, const LabeledEmbeddings& test, std::size_t num_classes,
                               const FewShotConfig& cfg, const RngStream& rng,
                               const std::vector<bool>* class_is_seen = nullptr);

/// Leave-one-out retrieval mAP under cosine ranking (ties by index).
double mean_average_precision(const Tensor2& x, const std::vector<std::size_t>& labels);

struct TransferEval {
  std::string dataset;
  std::vector<FewShotResult> fewshot;
  double map_score = 0.0;
};

struct EvalReport {
  std::string model;
  double closed_set_acc = 0.0;
  std::string tap;
  std::vector<TransferEval> transfer;
};

}  // namespace scenedistill
