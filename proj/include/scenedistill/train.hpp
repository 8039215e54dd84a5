#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "scenedistill/augment.hpp"
#include "scenedistill/data.hpp"
#include "scenedistill/losses.hpp"
#include "scenedistill/model.hpp"
#include "scenedistill/optim.hpp"
#include "scenedistill/rng.hpp"

namespace scenedistill {

struct EpochRecord {
  std::size_t epoch = 0;
  double lr = 0.0;
  double total = 0.0;
  double ce = 0.0;
  double supcon = 0.0;
  double kd = 0.0;
  double crd = 0.0;
  double train_acc = 0.0;
  double val_acc = 0.0;
  std::size_t excluded_anchors = 0;
};

struct StageReport {
  std::string stage;
  std::vector<EpochRecord> epochs;
  std::string checkpoint;  // relative to the run output directory
};

struct StageOptions {
  LossConfig losses;
  OptimConfig optim;
  AugmentConfig augment;
  /// Score the val split after every epoch.
  bool evaluate_val = true;
  std::function<void(const EpochRecord&)> on_epoch;
};

/// Epoch-level shuffle into batches of `batch_size`; a trailing batch of one
/// sample is merged into the previous batch.
std::vector<std::vector<std::size_t>> make_batches(std::size_t n, std::size_t batch_size, RngStream& rng);

/// Heads-only training on a frozen encoder. Clean samples feed the
/// classification head (CE); augmented copies feed the projection head
/// (soft SupCon). Freezes every encoder.* entry.
StageReport train_teacher_phase_a(const Dataset& data, SceneModel& teacher, const StageOptions& opts,
                                  const RngStream& rng);

/// Joint fine-tuning of every entry with lambda * CE + (1 - lambda) * SupCon
/// and the same clean/augmented routing. Unfreezes everything first.
StageReport train_teacher_phase_b(const Dataset& data, SceneModel& teacher, const StageOptions& opts,
                                  const RngStream& rng);

/// Student training against a frozen teacher with
/// alpha * CE + (1 - alpha) * KD + beta * CRD on distill-stage augmentations.
/// alpha = 1, beta = 0 trains without a teacher.
StageReport distill_student(const Dataset& data, const SceneModel& teacher, SceneModel& student,
                            const StageOptions& opts, const RngStream& rng);

std::string report_csv(const StageReport& report);
std::string report_json(const StageReport& report);

}  // namespace scenedistill
