#include "scenedistill/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "scenedistill/numerics.hpp"

namespace scenedistill {

EmbeddingTap default_tap(const ModelConfig& cfg) {
  return cfg.encoder.norm == EmbeddingNorm::none ? EmbeddingTap::backbone : EmbeddingTap::pre_layernorm;
}

namespace {

template <typename Fn>
void for_each_batch(const std::vector<Sample>& samples, std::size_t batch_size, Fn&& fn) {
  for (std::size_t start = 0; start < samples.size(); start += batch_size) {
    const std::size_t end = std::min(samples.size(), start + batch_size);
    std::vector<MelSpectrogram> batch;
    batch.reserve(end - start);
    for (std::size_t i = start; i < end; ++i) batch.push_back(samples[i].spec);
    fn(start, batch);
  }
}

}  // namespace

LabeledEmbeddings extract_embeddings(const SceneModel& model, const std::vector<Sample>& samples, EmbeddingTap tap,
                                     std::size_t batch_size) {
  if (tap == EmbeddingTap::pre_layernorm && model.config().encoder.norm == EmbeddingNorm::none)
    throw std::invalid_argument("extract_embeddings: pre_layernorm tap needs an encoder with an embedding norm");
  LabeledEmbeddings out{Tensor2(samples.size(), model.config().encoder.embed_dim), {}};
  for (const auto& s : samples) out.labels.push_back(s.class_id);
  for_each_batch(samples, batch_size, [&](std::size_t start, const std::vector<MelSpectrogram>& batch) {
    auto f = model.forward_eval(batch);
    const Tensor2& src = tap == EmbeddingTap::backbone ? f.embedding : f.pre_norm;
    std::copy(src.data.begin(), src.data.end(), out.x.data.begin() + static_cast<std::ptrdiff_t>(start * src.cols));
  });
  return out;
}

double closed_set_accuracy(const SceneModel& model, const std::vector<Sample>& samples, std::size_t batch_size) {
  if (samples.empty()) return 0.0;
  std::size_t correct = 0;
  for_each_batch(samples, batch_size, [&](std::size_t start, const std::vector<MelSpectrogram>& batch) {
    auto f = model.forward_eval(batch);
    for (std::size_t i = 0; i < batch.size(); ++i) {
      auto row = f.logits.row(i);
      const auto pred = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
      if (pred == samples[start + i].class_id) ++correct;
    }
  });
  return static_cast<double>(correct) / static_cast<double>(samples.size());
}

// --- probe -----------------------------------------------------------------------

std::vector<std::size_t> LogisticProbe::predict(const Tensor2& x) const {
  Tensor2 z = matmul_nt(x, weight);
  std::vector<std::size_t> pred(x.rows);
  for (std::size_t i = 0; i < x.rows; ++i) {
    std::size_t best = 0;
    for (std::size_t c = 0; c < z.cols; ++c)
      if (z(i, c) + bias[c] > z(i, best) + bias[best]) best = c;
    pred[i] = best;
  }
  return pred;
}

double probe_objective(const Tensor2& x, const std::vector<std::size_t>& labels, const Tensor2& weight,
                       const std::vector<double>& bias, double l2, Tensor2* grad_w, std::vector<double>* grad_b) {
  const std::size_t n = x.rows, c_n = weight.rows;
  Tensor2 z = matmul_nt(x, weight);
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    auto row = z.row(i);
    for (std::size_t c = 0; c < c_n; ++c) row[c] += bias[c];
    const double lse = log_sum_exp(row);
    loss += lse - row[labels[i]];
    if (grad_w) {
      for (std::size_t c = 0; c < c_n; ++c) row[c] = std::exp(row[c] - lse);
      row[labels[i]] -= 1.0;
      for (double& v : row) v /= static_cast<double>(n);
    }
  }
  loss /= static_cast<double>(n);
  double reg = 0.0;
  for (double w : weight.data) reg += w * w;
  loss += 0.5 * l2 * reg;
  if (grad_w) {
    *grad_w = matmul_tn(z, x);
    for (std::size_t i = 0; i < grad_w->size(); ++i) grad_w->data[i] += l2 * weight.data[i];
    grad_b->assign(c_n, 0.0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t c = 0; c < c_n; ++c) (*grad_b)[c] += z(i, c);
  }
  return loss;
}

LogisticProbe fit_probe(const Tensor2& x, const std::vector<std::size_t>& labels, std::size_t num_classes,
                        const ProbeConfig& cfg) {
  if (labels.size() != x.rows) throw std::invalid_argument("fit_probe: label count mismatch");
  std::vector<char> present(num_classes, 0);
  for (auto l : labels) {
    if (l >= num_classes) throw std::invalid_argument("fit_probe: label out of range");
    present[l] = 1;
  }
  for (std::size_t c = 0; c < num_classes; ++c)
    if (!present[c]) throw std::invalid_argument("fit_probe: class " + std::to_string(c) + " has no samples");

  LogisticProbe p;
  p.weight = Tensor2(num_classes, x.cols);
  p.bias.assign(num_classes, 0.0);
  Tensor2 gw;
  std::vector<double> gb;
  double f = probe_objective(x, labels, p.weight, p.bias, cfg.l2, &gw, &gb);
  double step = 1.0;
  Tensor2 trial_w(num_classes, x.cols);
  std::vector<double> trial_b(num_classes);
  for (p.iterations = 0; p.iterations < cfg.max_iters; ++p.iterations) {
    double g2 = 0.0;
    for (double g : gw.data) g2 += g * g;
    for (double g : gb) g2 += g * g;
    p.grad_norm = std::sqrt(g2);
    if (p.grad_norm < cfg.tol) break;
    double f_new = f;
    for (int tries = 0; tries < 60; ++tries) {
      for (std::size_t i = 0; i < gw.size(); ++i) trial_w.data[i] = p.weight.data[i] - step * gw.data[i];
      for (std::size_t c = 0; c < num_classes; ++c) trial_b[c] = p.bias[c] - step * gb[c];
      f_new = probe_objective(x, labels, trial_w, trial_b, cfg.l2);
      if (f_new <= f - 1e-4 * step * g2) break;
      step *= 0.5;
    }
    if (!(f_new < f)) break;  // no further decrease representable
    std::swap(p.weight, trial_w);
    std::swap(p.bias, trial_b);
    f = probe_objective(x, labels, p.weight, p.bias, cfg.l2, &gw, &gb);
    step *= 2.0;
  }
  p.objective = f;
  return p;
}

SplitAccuracy seen_unseen_split_report(const std::vector<std::size_t>& predicted, const std::vector<std::size_t>& truth,
                                       const std::vector<bool>& class_is_seen) {
  if (predicted.size() != truth.size()) throw std::invalid_argument("seen_unseen_split_report: length mismatch");
  std::size_t seen_n = 0, seen_ok = 0, unseen_n = 0, unseen_ok = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] >= class_is_seen.size()) throw std::invalid_argument("seen_unseen_split_report: unlabeled class");
    const bool ok = predicted[i] == truth[i];
    if (class_is_seen[truth[i]]) {
      ++seen_n;
      seen_ok += ok;
    } else {
      ++unseen_n;
      unseen_ok += ok;
    }
  }
  SplitAccuracy r;
  if (seen_n) r.seen = static_cast<double>(seen_ok) / static_cast<double>(seen_n);
  if (unseen_n) r.unseen = static_cast<double>(unseen_ok) / static_cast<double>(unseen_n);
  return r;
}

FewShotResult fewshot_protocol(const LabeledEmbeddings& pool, const LabeledEmbeddings& test, std::size_t num_classes,
                               const FewShotConfig& cfg, const RngStream& rng, const std::vector<bool>* class_is_seen) {
  if (cfg.k < 1 || cfg.repetitions < 1) throw std::invalid_argument("fewshot: k and repetitions must be >= 1");
  std::vector<std::vector<std::size_t>> by_class(num_classes);
  for (std::size_t i = 0; i < pool.labels.size(); ++i) by_class.at(pool.labels[i]).push_back(i);
  for (std::size_t c = 0; c < num_classes; ++c)
    if (by_class[c].size() < cfg.k)
      throw std::invalid_argument("fewshot: pool has fewer than k samples for class " + std::to_string(c));

  FewShotResult res;
  res.k = cfg.k;
  double seen_sum = 0.0, unseen_sum = 0.0;
  std::size_t seen_reps = 0, unseen_reps = 0;
  Tensor2 shots(cfg.k * num_classes, pool.x.cols);
  std::vector<std::size_t> shot_labels(cfg.k * num_classes);
  for (std::size_t r = 0; r < cfg.repetitions; ++r) {
    RngStream rep = rng.derive(r);
    std::size_t row = 0;
    for (std::size_t c = 0; c < num_classes; ++c) {
      const auto perm = rep.permutation(by_class[c].size());
      for (std::size_t j = 0; j < cfg.k; ++j, ++row) {
        auto src = pool.x.row(by_class[c][perm[j]]);
        std::copy(src.begin(), src.end(), shots.row(row).begin());
        shot_labels[row] = c;
      }
    }
    const auto probe = fit_probe(shots, shot_labels, num_classes, cfg.probe);
    const auto pred = probe.predict(test.x);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == test.labels[i];
    res.accuracies.push_back(static_cast<double>(correct) / static_cast<double>(pred.size()));
    if (class_is_seen) {
      const auto split = seen_unseen_split_report(pred, test.labels, *class_is_seen);
      if (split.seen) seen_sum += *split.seen, ++seen_reps;
      if (split.unseen) unseen_sum += *split.unseen, ++unseen_reps;
    }
  }
  res.mean = std::accumulate(res.accuracies.begin(), res.accuracies.end(), 0.0) /
             static_cast<double>(res.accuracies.size());
  double var = 0.0;
  for (double a : res.accuracies) var += (a - res.mean) * (a - res.mean);
  res.std = std::sqrt(var / static_cast<double>(res.accuracies.size()));
  if (seen_reps) res.seen_mean = seen_sum / static_cast<double>(seen_reps);
  if (unseen_reps) res.unseen_mean = unseen_sum / static_cast<double>(unseen_reps);
  return res;
}

double mean_average_precision(const Tensor2& x, const std::vector<std::size_t>& labels) {
  const std::size_t n = x.rows;
  if (n < 2 || labels.size() != n) throw std::invalid_argument("mean_average_precision: need >= 2 labeled samples");
  const auto u = normalize_rows(x);
  const Tensor2 sim = matmul_nt(u.unit, u.unit);
  double total = 0.0;
  std::size_t queries = 0;
  std::vector<std::size_t> order;
  for (std::size_t q = 0; q < n; ++q) {
    order.clear();
    for (std::size_t j = 0; j < n; ++j)
      if (j != q) order.push_back(j);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return sim(q, a) > sim(q, b); });
    double ap = 0.0;
    std::size_t hits = 0;
    for (std::size_t r = 0; r < order.size(); ++r) {
      if (labels[order[r]] != labels[q]) continue;
      ++hits;
      ap += static_cast<double>(hits) / static_cast<double>(r + 1);
    }
    if (hits == 0) continue;
    total += ap / static_cast<double>(hits);
    ++queries;
  }
  if (queries == 0) throw std::invalid_argument("mean_average_precision: no query has a relevant item");
  return total / static_cast<double>(queries);
}

}  // namespace scenedistill
