#include "scenedistill/train.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <nlohmann/json.hpp>

#include "scenedistill/eval.hpp"

namespace scenedistill {

std::vector<std::vector<std::size_t>> make_batches(std::size_t n, std::size_t batch_size, RngStream& rng) {
  if (batch_size < 1) throw std::invalid_argument("make_batches: batch_size must be >= 1");
  const auto order = rng.permutation(n);
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t start = 0; start < n; start += batch_size) {
    const std::size_t end = std::min(n, start + batch_size);
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                         order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  if (batches.size() > 1 && batches.back().size() == 1) {
    batches[batches.size() - 2].push_back(batches.back().front());
    batches.pop_back();
  }
  return batches;
}

namespace {

std::size_t count_correct(const Tensor2& logits, const std::vector<std::size_t>& labels) {
  std::size_t correct = 0;
  for (std::size_t i = 0; i < logits.rows; ++i) {
    auto row = logits.row(i);
    if (static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin()) == labels[i]) ++correct;
  }
  return correct;
}

struct Batch {
  std::vector<MelSpectrogram> specs;
  std::vector<std::size_t> labels;
};

Batch gather(const std::vector<Sample>& samples, const std::vector<std::size_t>& idx) {
  Batch b;
  for (auto i : idx) {
    b.specs.push_back(samples[i].spec);
    b.labels.push_back(samples[i].class_id);
  }
  return b;
}

void check_finite(const EpochRecord& r, const std::string& stage) {
  for (double v : {r.total, r.ce, r.supcon, r.kd, r.crd})
    if (!std::isfinite(v))
      throw std::runtime_error(stage + ": non-finite loss at epoch " + std::to_string(r.epoch));
}

StageReport train_teacher(const Dataset& data, SceneModel& teacher, const StageOptions& opts, const RngStream& rng,
                          bool heads_only) {
  opts.losses.validate();
  opts.augment.validate(data.manifest.mel_bins);
  StageReport report;
  report.stage = heads_only ? "teacher_phase_a" : "teacher_phase_b";
  if (opts.optim.epochs == 0) return report;
  opts.optim.validate();

  auto& params = teacher.params();
  if (heads_only) {
    params.set_frozen("", false);
    params.set_frozen("encoder.", true);
  } else {
    params.set_frozen("", false);
  }
  const bool contrastive = opts.losses.lambda < 1.0;
  const auto& train = data.split("train");
  const std::size_t num_classes = data.num_classes();
  AdamW optimizer(opts.optim);
  const RngStream batch_rng = rng.derive("batches");
  const RngStream aug_rng = rng.derive("augment");

  for (std::size_t epoch = 0; epoch < opts.optim.epochs; ++epoch) {
    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = lr_at(epoch, opts.optim);
    RngStream shuffle = batch_rng.derive(epoch);
    const auto batches = make_batches(train.size(), opts.optim.batch_size, shuffle);
    std::size_t seen = 0, correct = 0;
    for (std::size_t bi = 0; bi < batches.size(); ++bi) {
      const Batch batch = gather(train, batches[bi]);
      const Tensor2 y = one_hot(batch.labels, num_classes);
      params.zero_grad();

      auto clean = teacher.forward(batch.specs, {NormMode::train, true, false});
      ModelForward augmented;
      Tensor2 weights;
      if (contrastive && batch.specs.size() >= 2) {
        RngStream arng = aug_rng.derive(epoch).derive(bi);
        auto aug = stage_pipeline(batch.specs, y, AugmentStage::finetune, opts.augment, arng);
        augmented = teacher.forward(aug.batch, {NormMode::train, false, true});
        weights = std::move(*aug.weights);
      } else {
        augmented.projection = Tensor2(0, teacher.config().projection.out_dim);
        weights = Tensor2(0, 0);
      }
      LossConfig lc = opts.losses;
      if (!contrastive || batch.specs.size() < 2) lc.lambda = 1.0;
      auto loss = finetune_loss(clean.logits, y, augmented.projection, weights, lc);

      teacher.backward(clean, loss.grad_logits, Tensor2(), !heads_only);
      if (contrastive && augmented.projection.rows > 0)
        teacher.backward(augmented, Tensor2(), loss.grad_projection, !heads_only);
      optimizer.step(params, rec.lr);

      const double w = static_cast<double>(batch.labels.size());
      rec.total += loss.total * w;
      rec.ce += loss.ce * w;
      rec.supcon += loss.supcon * w;
      rec.excluded_anchors += loss.excluded;
      correct += count_correct(clean.logits, batch.labels);
      seen += batch.labels.size();
    }
    const double n = static_cast<double>(seen);
    rec.total /= n;
    rec.ce /= n;
    rec.supcon /= n;
    rec.train_acc = static_cast<double>(correct) / n;
    if (opts.evaluate_val && data.splits.contains("val")) rec.val_acc = closed_set_accuracy(teacher, data.split("val"));
    check_finite(rec, report.stage);
    if (opts.on_epoch) opts.on_epoch(rec);
    report.epochs.push_back(rec);
  }
  return report;
}

}  // namespace

StageReport train_teacher_phase_a(const Dataset& data, SceneModel& teacher, const StageOptions& opts,
                                  const RngStream& rng) {
  if (opts.optim.epochs == 0) {
    StageReport r;
    r.stage = "teacher_phase_a";
    return r;
  }
  return train_teacher(data, teacher, opts, rng, true);
}

StageReport train_teacher_phase_b(const Dataset& data, SceneModel& teacher, const StageOptions& opts,
                                  const RngStream& rng) {
  return train_teacher(data, teacher, opts, rng, false);
}

StageReport distill_student(const Dataset& data, const SceneModel& teacher, SceneModel& student,
                            const StageOptions& opts, const RngStream& rng) {
  opts.losses.validate();
  opts.augment.validate(data.manifest.mel_bins);
  StageReport report;
  report.stage = "distill";
  if (opts.optim.epochs == 0) return report;
  opts.optim.validate();

  const bool use_teacher = opts.losses.alpha < 1.0 || opts.losses.beta > 0.0;
  const bool use_crd = opts.losses.beta > 0.0;
  if (use_teacher && teacher.config().head.num_classes != student.config().head.num_classes)
    throw std::invalid_argument("distill: teacher and student class counts differ");
  if (use_crd && teacher.config().projection.out_dim != student.config().projection.out_dim)
    throw std::invalid_argument("distill: teacher and student projection widths differ");

  auto& params = student.params();
  params.set_frozen("", false);
  const auto& train = data.split("train");
  const std::size_t num_classes = data.num_classes();
  AdamW optimizer(opts.optim);
  const RngStream batch_rng = rng.derive("batches");
  const RngStream aug_rng = rng.derive("augment");

  for (std::size_t epoch = 0; epoch < opts.optim.epochs; ++epoch) {
    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = lr_at(epoch, opts.optim);
    RngStream shuffle = batch_rng.derive(epoch);
    const auto batches = make_batches(train.size(), opts.optim.batch_size, shuffle);
    std::size_t seen = 0, correct = 0;
    for (std::size_t bi = 0; bi < batches.size(); ++bi) {
      const Batch batch = gather(train, batches[bi]);
      const Tensor2 y = one_hot(batch.labels, num_classes);
      RngStream arng = aug_rng.derive(epoch).derive(bi);
      auto aug = stage_pipeline(batch.specs, y, AugmentStage::distill, opts.augment, arng);
      const bool crd_here = use_crd && aug.batch.size() >= 2;

      params.zero_grad();
      auto sf = student.forward(aug.batch, {NormMode::train, true, crd_here});
      Tensor2 t_logits(sf.logits.rows, sf.logits.cols), q;
      if (use_teacher) {
        auto tf = teacher.forward_eval(aug.batch, crd_here);
        t_logits = std::move(tf.logits);
        if (crd_here) q = std::move(tf.projection);
      }
      LossConfig lc = opts.losses;
      if (!crd_here) lc.beta = 0.0;
      if (!use_teacher) lc.alpha = 1.0;
      auto loss = distill_loss(sf.logits, batch.labels, t_logits, q, crd_here ? sf.projection : q, lc);
      student.backward(sf, loss.grad_student_logits, crd_here ? loss.grad_student_projection : Tensor2());
      optimizer.step(params, rec.lr);

      const double w = static_cast<double>(batch.labels.size());
      rec.total += loss.total * w;
      rec.ce += loss.ce * w;
      rec.kd += loss.kd * w;
      rec.crd += loss.crd * w;
      correct += count_correct(sf.logits, batch.labels);
      seen += batch.labels.size();
    }
    const double n = static_cast<double>(seen);
    rec.total /= n;
    rec.ce /= n;
    rec.kd /= n;
    rec.crd /= n;
    rec.train_acc = static_cast<double>(correct) / n;
    if (opts.evaluate_val && data.splits.contains("val")) rec.val_acc = closed_set_accuracy(student, data.split("val"));
    check_finite(rec, report.stage);
    if (opts.on_epoch) opts.on_epoch(rec);
    report.epochs.push_back(rec);
  }
  return report;
}

std::string report_csv(const StageReport& report) {
  std::ostringstream out;
  out.precision(17);
  out << "epoch,lr,total,ce,supcon,kd,crd,train_acc,val_acc,excluded_anchors\n";
  for (const auto& r : report.epochs)
    out << r.epoch << ',' << r.lr << ',' << r.total << ',' << r.ce << ',' << r.supcon << ',' << r.kd << ','
        << r.crd << ',' << r.train_acc << ',' << r.val_acc << ',' << r.excluded_anchors << '\n';
  return out.str();
}

std::string report_json(const StageReport& report) {
  nlohmann::ordered_json j;
  j["stage"] = report.stage;
  j["epochs"] = report.epochs.size();
  j["checkpoint"] = report.checkpoint;
  if (!report.epochs.empty()) {
    const auto& first = report.epochs.front();
    const auto& last = report.epochs.back();
    j["first_epoch"] = {{"total", first.total}, {"ce", first.ce}, {"train_acc", first.train_acc},
                        {"val_acc", first.val_acc}};
    j["final_epoch"] = {{"total", last.total}, {"ce", last.ce},   {"supcon", last.supcon}, {"kd", last.kd},
                        {"crd", last.crd},     {"lr", last.lr},   {"train_acc", last.train_acc},
                        {"val_acc", last.val_acc}};
  }
  return j.dump(2) + "\n";
}

}  // namespace scenedistill
