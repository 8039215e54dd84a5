#include "scenedistill/pipeline.hpp"

#include <algorithm>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "scenedistill/checkpoint.hpp"
#include "scenedistill/io.hpp"
#include "scenedistill/rng.hpp"

namespace fs = std::filesystem;

namespace scenedistill {

std::string to_string(TeacherCondition c) { return c == TeacherCondition::ft ? "ft" : "cft"; }

std::string to_string(DistillMethod m) {
  switch (m) {
    case DistillMethod::none: return "none";
    case DistillMethod::kd: return "kd";
    case DistillMethod::crd: return "crd";
  }
  return "?";
}

TeacherCondition teacher_condition_from_string(const std::string& s) {
  if (s == "ft") return TeacherCondition::ft;
  if (s == "cft") return TeacherCondition::cft;
  throw ConfigError("unknown teacher condition '" + s + "' (expected ft or cft)");
}

DistillMethod distill_method_from_string(const std::string& s) {
  if (s == "none") return DistillMethod::none;
  if (s == "kd") return DistillMethod::kd;
  if (s == "crd") return DistillMethod::crd;
  throw ConfigError("unknown distillation method '" + s + "' (expected none, kd or crd)");
}

fs::path data_dir(const RunConfig& cfg) { return fs::path(cfg.out_dir) / "data"; }

std::string teacher_name(TeacherCondition c) { return "teacher_" + to_string(c); }

std::string student_name(TeacherCondition c, DistillMethod m) {
  if (m == DistillMethod::none) return "student_none";
  return "student_" + to_string(c) + "_" + to_string(m);
}

fs::path model_dir(const RunConfig& cfg, const std::string& model) { return fs::path(cfg.out_dir) / model; }

fs::path checkpoint_path(const RunConfig& cfg, const std::string& model) {
  return model_dir(cfg, model) / "checkpoint.bin";
}

LossConfig teacher_losses(const RunConfig& cfg, TeacherCondition c) {
  LossConfig l = cfg.losses;
  if (c == TeacherCondition::ft) l.lambda = 1.0;
  return l;
}

LossConfig student_losses(const RunConfig& cfg, DistillMethod m) {
  LossConfig l = cfg.losses;
  if (m == DistillMethod::none) {
    l.alpha = 1.0;
    l.beta = 0.0;
  } else if (m == DistillMethod::kd) {
    l.beta = 0.0;
  }
  return l;
}

namespace {

RngStream root_stream(const RunConfig& cfg) { return RngStream(cfg.seed, 0); }

std::vector<std::string> dataset_names(const RunConfig& cfg) {
  const GeneratorConfig g = cfg.data.generator();
  std::vector<std::string> names{g.train_name};
  for (const auto& t : g.transfer_sets) names.push_back(t.name);
  return names;
}

void write_stage(const fs::path& dir, const std::string& stem, const StageReport& r) {
  write_file_atomic(dir / (stem + ".csv"), report_csv(r));
  write_file_atomic(dir / (stem + ".json"), report_json(r));
}

SceneModel require_checkpoint(const RunConfig& cfg, const std::string& model) {
  const fs::path p = checkpoint_path(cfg, model);
  if (!fs::exists(p)) throw MissingInputError("missing checkpoint: " + p.string());
  return load_checkpoint(p);
}

}  // namespace

std::vector<Dataset> load_datasets(const RunConfig& cfg) {
  std::vector<Dataset> out;
  for (const auto& name : dataset_names(cfg)) {
    const fs::path m = manifest_path(data_dir(cfg), name);
    if (!fs::exists(m)) throw MissingInputError("missing dataset manifest: " + m.string() + " (run gen-data first)");
    out.push_back(load_dataset(m));
  }
  return out;
}

void run_gen_data(const RunConfig& cfg) {
  const auto datasets = generate_datasets(cfg.data.generator(), root_stream(cfg).derive("data"));
  for (const auto& ds : datasets) save_dataset(data_dir(cfg), ds);
}

SceneModel run_train_teacher(const RunConfig& cfg, TeacherCondition c) {
  const auto datasets = load_datasets(cfg);
  const Dataset& train = datasets.front();
  const RngStream root = root_stream(cfg);
  // Both conditions start from the same initialization and batch order.
  RngStream init = root.derive("teacher-init");
  SceneModel teacher(
      cfg.teacher.model(EncoderVariant::teacher_toy, cfg.data.mel_bins, cfg.data.frames, train.num_classes(),
                        cfg.losses.gamma),
      init);

  const LossConfig losses = teacher_losses(cfg, c);
  const fs::path dir = model_dir(cfg, teacher_name(c));
  StageOptions a{losses, cfg.teacher_head, cfg.augment_finetune, true, {}};
  auto report_a = train_teacher_phase_a(train, teacher, a, root.derive("teacher-phase-a"));
  StageOptions b{losses, cfg.teacher_joint, cfg.augment_finetune, true, {}};
  auto report_b = train_teacher_phase_b(train, teacher, b, root.derive("teacher-phase-b"));
  teacher.params().set_frozen("", false);

  const fs::path ckpt = checkpoint_path(cfg, teacher_name(c));
  save_checkpoint(ckpt, teacher);
  report_a.checkpoint = report_b.checkpoint = fs::relative(ckpt, cfg.out_dir).generic_string();
  write_stage(dir, "phase_a", report_a);
  write_stage(dir, "phase_b", report_b);
  return teacher;
}

SceneModel run_distill(const RunConfig& cfg, TeacherCondition c, DistillMethod m) {
  const auto datasets = load_datasets(cfg);
  const Dataset& train = datasets.front();
  SceneModel teacher;
  if (m != DistillMethod::none) teacher = require_checkpoint(cfg, teacher_name(c));

  const RngStream root = root_stream(cfg);
  RngStream init = root.derive("student-init");
  SceneModel student(
      cfg.student.model(EncoderVariant::student_toy, cfg.data.mel_bins, cfg.data.frames, train.num_classes(),
                        cfg.losses.gamma),
      init);
  StageOptions opts{student_losses(cfg, m), cfg.distill, cfg.augment_distill, true, {}};
  auto report = distill_student(train, teacher, student, opts, root.derive("distill"));

  const std::string name = student_name(c, m);
  const fs::path ckpt = checkpoint_path(cfg, name);
  save_checkpoint(ckpt, student);
  report.checkpoint = fs::relative(ckpt, cfg.out_dir).generic_string();
  write_stage(model_dir(cfg, name), "distill", report);
  return student;
}

EvalReport evaluate_model(const SceneModel& model, const std::string& name, const std::vector<Dataset>& datasets,
                          const RunConfig& cfg) {
  if (datasets.empty()) throw std::invalid_argument("evaluate_model: no datasets");
  EvalReport report;
  report.model = name;
  const EmbeddingTap tap = default_tap(model.config());
  report.tap = tap == EmbeddingTap::backbone ? "backbone" : "pre_layernorm";
  report.closed_set_acc = closed_set_accuracy(model, datasets.front().split("val"));

  // Every model sees the same few-shot draws for a given seed.
  const RngStream eval_rng = root_stream(cfg).derive("eval");
  for (std::size_t d = 1; d < datasets.size(); ++d) {
    const Dataset& ds = datasets[d];
    TransferEval te;
    te.dataset = ds.manifest.name;
    const auto pool = extract_embeddings(model, ds.split("pool"), tap);
    const auto test = extract_embeddings(model, ds.split("test"), tap);
    for (std::size_t k : cfg.fewshot.shots)
      te.fewshot.push_back(fewshot_protocol(pool, test, ds.num_classes(), cfg.fewshot.for_k(k),
                                            eval_rng.derive(ds.manifest.name).derive(k), &ds.manifest.seen));
    te.map_score = mean_average_precision(test.x, test.labels);
    report.transfer.push_back(std::move(te));
  }
  return report;
}

EvalReport run_eval(const RunConfig& cfg, const std::string& model) {
  const SceneModel m = require_checkpoint(cfg, model);
  const auto datasets = load_datasets(cfg);
  EvalReport report = evaluate_model(m, model, datasets, cfg);
  const fs::path dir = fs::path(cfg.out_dir) / "eval";
  write_file_atomic(dir / (model + ".json"), eval_report_json(report));
  write_file_atomic(dir / (model + ".fewshot.csv"), fewshot_csv(report));
  return report;
}

namespace {

nlohmann::ordered_json optional_json(const std::optional<double>& v) {
  return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(nullptr);
}

std::optional<double> optional_from(const nlohmann::json& j) {
  if (j.is_null()) return std::nullopt;
  return j.get<double>();
}

}  // namespace

std::string eval_report_json(const EvalReport& report) {
  nlohmann::ordered_json j;
  j["model"] = report.model;
  j["tap"] = report.tap;
  j["closed_set_acc"] = report.closed_set_acc;
  j["transfer"] = nlohmann::ordered_json::array();
  for (const auto& te : report.transfer) {
    nlohmann::ordered_json t;
    t["dataset"] = te.dataset;
    t["map"] = te.map_score;
    t["fewshot"] = nlohmann::ordered_json::array();
    for (const auto& f : te.fewshot) {
      nlohmann::ordered_json fj;
      fj["k"] = f.k;
      fj["mean"] = f.mean;
      fj["std"] = f.std;
      fj["seen_mean"] = optional_json(f.seen_mean);
      fj["unseen_mean"] = optional_json(f.unseen_mean);
      fj["accuracies"] = f.accuracies;
      t["fewshot"].push_back(std::move(fj));
    }
    j["transfer"].push_back(std::move(t));
  }
  return j.dump(2) + "\n";
}

EvalReport eval_report_from_json(const std::string& text) {
  const auto j = nlohmann::json::parse(text);
  EvalReport r;
  r.model = j.at("model").get<std::string>();
  r.tap = j.at("tap").get<std::string>();
  r.closed_set_acc = j.at("closed_set_acc").get<double>();
  for (const auto& t : j.at("transfer")) {
    TransferEval te;
    te.dataset = t.at("dataset").get<std::string>();
    te.map_score = t.at("map").get<double>();
    for (const auto& fj : t.at("fewshot")) {
      FewShotResult f;
      f.k = fj.at("k").get<std::size_t>();
      f.mean = fj.at("mean").get<double>();
      f.std = fj.at("std").get<double>();
      f.seen_mean = optional_from(fj.at("seen_mean"));
      f.unseen_mean = optional_from(fj.at("unseen_mean"));
      f.accuracies = fj.at("accuracies").get<std::vector<double>>();
      te.fewshot.push_back(std::move(f));
    }
    r.transfer.push_back(std::move(te));
  }
  return r;
}

std::string fewshot_csv(const EvalReport& report) {
  std::ostringstream out;
  out.precision(17);
  out << "model,dataset,k,repetition,accuracy\n";
  for (const auto& te : report.transfer)
    for (const auto& f : te.fewshot)
      for (std::size_t r = 0; r < f.accuracies.size(); ++r)
        out << report.model << ',' << te.dataset << ',' << f.k << ',' << r << ',' << f.accuracies[r] << '\n';
  return out.str();
}

std::vector<SummaryRow> run_report(const RunConfig& cfg) {
  const fs::path dir = fs::path(cfg.out_dir) / "eval";
  if (!fs::is_directory(dir)) throw MissingInputError("no evaluation results under " + dir.string());

  // Known conditions first, in table order, then anything else by name.
  std::vector<std::string> order;
  for (auto c : {TeacherCondition::ft, TeacherCondition::cft}) order.push_back(teacher_name(c));
  order.push_back(student_name(TeacherCondition::ft, DistillMethod::none));
  for (auto c : {TeacherCondition::ft, TeacherCondition::cft})
    for (auto m : {DistillMethod::kd, DistillMethod::crd}) order.push_back(student_name(c, m));
  std::vector<std::string> found;
  for (const auto& e : fs::directory_iterator(dir)) {
    const std::string fname = e.path().filename().string();
    const std::string suffix = ".json";
    if (fname.size() > suffix.size() && fname.ends_with(suffix))
      found.push_back(fname.substr(0, fname.size() - suffix.size()));
  }
  if (found.empty()) throw MissingInputError("no evaluation results under " + dir.string());
  std::sort(found.begin(), found.end(), [&](const std::string& a, const std::string& b) {
    const auto ia = std::find(order.begin(), order.end(), a) - order.begin();
    const auto ib = std::find(order.begin(), order.end(), b) - order.begin();
    return ia != ib ? ia < ib : a < b;
  });

  std::vector<SummaryRow> rows;
  for (const auto& name : found) {
    const EvalReport r = eval_report_from_json(read_file(dir / (name + ".json")));
    SummaryRow row;
    row.model = r.model;
    row.teacher = row.method = "-";
    for (auto c : {TeacherCondition::ft, TeacherCondition::cft}) {
      if (name == teacher_name(c)) row.teacher = to_string(c);
      for (auto m : {DistillMethod::kd, DistillMethod::crd})
        if (name == student_name(c, m)) {
          row.teacher = to_string(c);
          row.method = to_string(m);
        }
    }
    if (name == student_name(TeacherCondition::ft, DistillMethod::none)) row.method = "none";
    row.closed_set_acc = r.closed_set_acc;
    for (const auto& te : r.transfer) {
      for (const auto& f : te.fewshot) {
        const std::string p = te.dataset + "_" + std::to_string(f.k) + "shot";
        row.metrics.emplace_back(p + "_mean", f.mean);
        row.metrics.emplace_back(p + "_seen", f.seen_mean.value_or(std::nan("")));
        row.metrics.emplace_back(p + "_unseen", f.unseen_mean.value_or(std::nan("")));
      }
      row.metrics.emplace_back(te.dataset + "_map", te.map_score);
    }
    rows.push_back(std::move(row));
  }

  std::ostringstream csv;
  csv.precision(10);
  csv << "model,teacher,method,closed_set_acc";
  for (const auto& [k, v] : rows.front().metrics) csv << ',' << k;
  csv << '\n';
  nlohmann::ordered_json j = nlohmann::ordered_json::array();
  for (const auto& row : rows) {
    if (row.metrics.size() != rows.front().metrics.size())
      throw std::runtime_error("report: evaluation results have inconsistent layouts");
    csv << row.model << ',' << row.teacher << ',' << row.method << ',' << row.closed_set_acc;
    nlohmann::ordered_json rj{{"model", row.model}, {"teacher", row.teacher}, {"method", row.method},
                              {"closed_set_acc", row.closed_set_acc}};
    for (const auto& [k, v] : row.metrics) {
      csv << ',' << v;
      rj[k] = std::isnan(v) ? nlohmann::ordered_json(nullptr) : nlohmann::ordered_json(v);
    }
    csv << '\n';
    j.push_back(std::move(rj));
  }
  write_file_atomic(fs::path(cfg.out_dir) / "report.csv", csv.str());
  write_file_atomic(fs::path(cfg.out_dir) / "report.json", j.dump(2) + "\n");
  return rows;
}

}  // namespace scenedistill
