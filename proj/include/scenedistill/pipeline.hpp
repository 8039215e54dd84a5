#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "scenedistill/config.hpp"
#include "scenedistill/data.hpp"
#include "scenedistill/eval.hpp"
#include "scenedistill/model.hpp"
#include "scenedistill/train.hpp"

namespace scenedistill {

/// ft trains the teacher with CE only (lambda = 1); cft adds soft SupCon.
enum class TeacherCondition { ft, cft };
/// none trains the student on labels alone (alpha = 1, beta = 0).
enum class DistillMethod { none, kd, crd };

std::string to_string(TeacherCondition c);
std::string to_string(DistillMethod m);
TeacherCondition teacher_condition_from_string(const std::string& s);
DistillMethod distill_method_from_string(const std::string& s);

// Output layout under RunConfig::out_dir:
//   data/                        datasets (manifest + ASCD splits)
//   teacher_<cond>/              checkpoint.bin(.json), phase_a/b.{csv,json}
//   student_<cond>_<method>/     checkpoint.bin(.json), distill.{csv,json}
//   student_none/                label-only student
//   eval/<model>.json            EvalReport (+ <model>.fewshot.csv)
//   report.{csv,json}            summary
std::filesystem::path data_dir(const RunConfig& cfg);
std::string teacher_name(TeacherCondition c);
std::string student_name(TeacherCondition c, DistillMethod m);
std::filesystem::path model_dir(const RunConfig& cfg, const std::string& model);
std::filesystem::path checkpoint_path(const RunConfig& cfg, const std::string& model);

/// Loss weights for a stage condition.
LossConfig teacher_losses(const RunConfig& cfg, TeacherCondition c);
LossConfig student_losses(const RunConfig& cfg, DistillMethod m);

/// Loads the training dataset followed by the transfer sets.
std::vector<Dataset> load_datasets(const RunConfig& cfg);

void run_gen_data(const RunConfig& cfg);
/// Phase A (heads only) then phase B (joint). Returns the trained teacher.
SceneModel run_train_teacher(const RunConfig& cfg, TeacherCondition c);
/// Needs the teacher checkpoint unless `m` is none.
SceneModel run_distill(const RunConfig& cfg, TeacherCondition c, DistillMethod m);

/// Closed-set accuracy on the training val split plus, per transfer set,
/// few-shot accuracy for each configured K and retrieval mAP on the test split.
EvalReport evaluate_model(const SceneModel& model, const std::string& name, const std::vector<Dataset>& datasets,
                          const RunConfig& cfg);
EvalReport run_eval(const RunConfig& cfg, const std::string& model);

std::string eval_report_json(const EvalReport& report);
EvalReport eval_report_from_json(const std::string& text);
/// One row per (transfer set, K, repetition).
std::string fewshot_csv(const EvalReport& report);

struct SummaryRow {
  std::string model;
  std::string teacher;  // teacher condition or "-"
  std::string method;   // distill method or "-"
  double closed_set_acc = 0.0;
  std::vector<std::pair<std::string, double>> metrics;
};
/// Gathers every eval/<model>.json into report.csv and report.json.
std::vector<SummaryRow> run_report(const RunConfig& cfg);

}  // namespace scenedistill
