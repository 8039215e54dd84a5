#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "scenedistill/augment.hpp"
#include "scenedistill/data.hpp"
#include "scenedistill/eval.hpp"
#include "scenedistill/losses.hpp"
#include "scenedistill/model.hpp"
#include "scenedistill/optim.hpp"

namespace scenedistill {

/// Invalid or inconsistent configuration. The CLI maps this to exit code 2.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct DataSection {
  std::size_t mel_bins = 64;
  std::size_t frames = 64;
  std::size_t seen_classes = 8;
  std::size_t unseen_classes = 4;
  std::size_t train_per_class = 60;
  std::size_t val_per_class = 20;
  std::size_t pool_per_class = 20;
  std::size_t test_per_class = 30;
  double band_width = 3.2;
  double snr = 20.0;
  double background = -30.0;
  double noise_std = 3.0;
  double texture_std = 2.0;
  double tilt_max = 6.0;

  GeneratorConfig generator() const;
};

struct EncoderSection {
  std::size_t embed_dim = 768;
  std::size_t width = 1;
  EmbeddingNorm norm = EmbeddingNorm::none;
  std::size_t projection_hidden = 0;  // 0 = embed_dim
  std::size_t projection_dim = 128;
  double input_offset = -40.0;
  double input_scale = 0.05;
  Pooling pooling = Pooling::global;

  ModelConfig model(EncoderVariant variant, std::size_t mel_bins, std::size_t frames, std::size_t num_classes,
                    double gamma) const;
};

struct FewShotSection {
  std::vector<std::size_t> shots{5, 20};
  std::size_t repetitions = 50;
  double probe_l2 = 1e-3;
  std::size_t probe_max_iters = 5000;
  double probe_tol = 1e-7;

  FewShotConfig for_k(std::size_t k) const { return {k, repetitions, {probe_l2, probe_max_iters, probe_tol}}; }
};

struct RunConfig {
  std::uint64_t seed = 0;
  std::string out_dir = "out";
  DataSection data;
  EncoderSection teacher;
  EncoderSection student{128, 5, EmbeddingNorm::layer_norm, 0, 128, -40.0, 0.05, Pooling::time};
  LossConfig losses;
  OptimConfig teacher_head = teacher_head_optim_defaults();
  OptimConfig teacher_joint = teacher_joint_optim_defaults();
  OptimConfig distill = distill_optim_defaults();
  AugmentConfig augment_finetune;
  AugmentConfig augment_distill{0.4, 0.4, 0.0, 2.0, 6, 48, 0.6, 2, 6.0};
  FewShotSection fewshot;

  /// Throws ConfigError.
  void validate() const;
};

void to_json(nlohmann::json& j, const EncoderConfig& c);
void from_json(const nlohmann::json& j, EncoderConfig& c);
void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);
void to_json(nlohmann::json& j, const RunConfig& c);
void from_json(const nlohmann::json& j, RunConfig& c);

/// Defaults overlaid with `doc`; keys absent from the defaults are rejected.
RunConfig parse_run_config(const nlohmann::json& doc);
RunConfig load_run_config(const std::string& path, const std::vector<std::string>& overrides = {});

/// Apply a "dotted.path=value" override; value parses as JSON, else string.
void apply_override(nlohmann::json& doc, const std::string& assignment);

}  // namespace scenedistill
