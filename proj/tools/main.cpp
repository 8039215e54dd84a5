#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "scenedistill/checkpoint.hpp"
#include "scenedistill/config.hpp"
#include "scenedistill/data.hpp"
#include "scenedistill/gradcheck_suite.hpp"
#include "scenedistill/io.hpp"
#include "scenedistill/pipeline.hpp"

using namespace scenedistill;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitCheckFailed = 1;
constexpr int kExitConfig = 2;
constexpr int kExitMissingInput = 3;

struct CommonFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--config", f.config, "JSON run configuration (defaults when omitted)");
  cmd->add_option("--seed", f.seed, "Override the run seed");
  cmd->add_option("--out", f.out, "Override the output directory");
  cmd->add_option("--set", f.overrides, "Override a config leaf, e.g. losses.lambda=0.25")->take_all();
}

RunConfig resolve(const CommonFlags& f) {
  std::vector<std::string> overrides = f.overrides;
  if (f.seed) overrides.push_back("seed=" + std::to_string(*f.seed));
  if (f.out) overrides.push_back("out_dir=" + nlohmann::json(*f.out).dump());
  if (f.config.empty()) {
    nlohmann::json doc = nlohmann::json::object();
    for (const auto& o : overrides) apply_override(doc, o);
    return parse_run_config(doc);
  }
  return load_run_config(f.config, overrides);
}

void print_eval(const EvalReport& r) {
  std::printf("%s  closed-set %.4f  (tap %s)\n", r.model.c_str(), r.closed_set_acc, r.tap.c_str());
  for (const auto& te : r.transfer) {
    for (const auto& f : te.fewshot)
      std::printf("  %-12s %2zu-shot mean %.4f  std %.4f  seen %s  unseen %s\n", te.dataset.c_str(), f.k, f.mean, f.std,
                  f.seen_mean ? std::to_string(*f.seen_mean).c_str() : "-",
                  f.unseen_mean ? std::to_string(*f.unseen_mean).c_str() : "-");
    std::printf("  %-12s mAP %.4f\n", te.dataset.c_str(), te.map_score);
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Contrastive fine-tuning and distillation for acoustic scene embeddings"};
  app.require_subcommand(1);

  CommonFlags flags;
  auto* gen = app.add_subcommand("gen-data", "Generate the synthetic datasets");
  add_common(gen, flags);

  std::string teacher_cond = "cft";
  auto* train = app.add_subcommand("train-teacher", "Fine-tune the teacher (heads, then jointly)");
  add_common(train, flags);
  train->add_option("--condition", teacher_cond, "cft (CE + soft SupCon) or ft (CE only)");

  std::string method = "crd";
  auto* distill = app.add_subcommand("distill", "Train the student against a teacher checkpoint");
  add_common(distill, flags);
  distill->add_option("--teacher", teacher_cond, "Teacher condition: cft or ft");
  distill->add_option("--method", method, "none, kd or crd");

  std::string model;
  auto* eval = app.add_subcommand("eval", "Closed-set, few-shot and retrieval evaluation");
  add_common(eval, flags);
  eval->add_option("--model", model, "Model directory name under the output dir, e.g. student_cft_crd")->required();

  std::size_t seeds = 20;
  auto* grad = app.add_subcommand("gradcheck", "Finite-difference check of every loss and backward pass");
  add_common(grad, flags);
  grad->add_option("--seeds", seeds, "Random instances per check");

  auto* report = app.add_subcommand("report", "Summarize every evaluation into report.csv/json");
  add_common(report, flags);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (grad->parsed()) {
      (void)resolve(flags);
      constexpr double kTolerance = 1e-4;
      bool ok = true;
      for (const auto& e : run_gradcheck_suite(seeds)) {
        const bool pass = e.max_rel_error < kTolerance;
        ok = ok && pass;
        std::printf("%-28s runs %3zu  max rel error %.3e  %s\n", e.name.c_str(), e.runs, e.max_rel_error,
                    pass ? "ok" : "FAIL");
      }
      return ok ? kExitOk : kExitCheckFailed;
    }

    const RunConfig cfg = resolve(flags);
    if (gen->parsed()) {
      run_gen_data(cfg);
      std::printf("datasets written to %s\n", data_dir(cfg).string().c_str());
    } else if (train->parsed()) {
      const auto c = teacher_condition_from_string(teacher_cond);
      run_train_teacher(cfg, c);
      std::printf("teacher written to %s\n", checkpoint_path(cfg, teacher_name(c)).string().c_str());
    } else if (distill->parsed()) {
      const auto c = teacher_condition_from_string(teacher_cond);
      const auto m = distill_method_from_string(method);
      run_distill(cfg, c, m);
      std::printf("student written to %s\n", checkpoint_path(cfg, student_name(c, m)).string().c_str());
    } else if (eval->parsed()) {
      print_eval(run_eval(cfg, model));
    } else if (report->parsed()) {
      const auto rows = run_report(cfg);
      for (const auto& r : rows)
        std::printf("%-20s teacher %-4s method %-5s closed-set %.4f\n", r.model.c_str(), r.teacher.c_str(),
                    r.method.c_str(), r.closed_set_acc);
      std::printf("report written to %s/report.csv\n", cfg.out_dir.c_str());
    }
    return kExitOk;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const MissingInputError& e) {
    std::cerr << "missing input: " << e.what() << "\n";
    return kExitMissingInput;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitCheckFailed;
  }
}
