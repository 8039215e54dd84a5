#include "scenedistill/config.hpp"

#include <fstream>

#include "scenedistill/io.hpp"

namespace scenedistill {

using nlohmann::json;

GeneratorConfig DataSection::generator() const {
  GeneratorConfig g = default_generator_config(mel_bins, frames, seen_classes, unseen_classes);
  for (auto& s : g.scenes) {
    s.band_width = band_width;
    s.snr = snr;
  }
  g.train_per_class = train_per_class;
  g.val_per_class = val_per_class;
  for (auto& t : g.transfer_sets) {
    t.pool_per_class = pool_per_class;
    t.test_per_class = test_per_class;
  }
  g.background = background;
  g.noise_std = noise_std;
  g.texture_std = texture_std;
  g.tilt_max = tilt_max;
  return g;
}

ModelConfig EncoderSection::model(EncoderVariant variant, std::size_t mel_bins, std::size_t frames,
                                  std::size_t num_classes, double gamma) const {
  ModelConfig m;
  m.encoder = {variant, mel_bins, frames, embed_dim, width, norm, input_offset, input_scale, pooling};
  m.head = {num_classes, embed_dim, gamma};
  m.projection = {embed_dim, projection_hidden == 0 ? embed_dim : projection_hidden, projection_dim};
  return m;
}

void RunConfig::validate() const {
  try {
    if (data.seen_classes < 2) throw std::invalid_argument("data.seen_classes must be >= 2");
    data.generator().validate();
    losses.validate();
    for (const auto* o : {&teacher_head, &teacher_joint, &distill}) o->validate();
    augment_finetune.validate(data.mel_bins);
    augment_distill.validate(data.mel_bins);
    teacher.model(EncoderVariant::teacher_toy, data.mel_bins, data.frames, data.seen_classes, losses.gamma).validate();
    student.model(EncoderVariant::student_toy, data.mel_bins, data.frames, data.seen_classes, losses.gamma).validate();
    if (teacher.projection_dim != student.projection_dim)
      throw std::invalid_argument("teacher and student projection_dim must match for CRD");
    if (fewshot.shots.empty() || fewshot.repetitions < 1) throw std::invalid_argument("fewshot needs shots and repetitions");
    for (auto k : fewshot.shots)
      if (k < 1 || k > data.pool_per_class) throw std::invalid_argument("fewshot shots must be in 1..pool_per_class");
    if (out_dir.empty()) throw std::invalid_argument("out_dir must be set");
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("invalid config: ") + e.what());
  }
}

// --- JSON ------------------------------------------------------------------------

void to_json(json& j, EmbeddingNorm v) { j = to_string(v); }
void from_json(const json& j, EmbeddingNorm& v) { v = embedding_norm_from_string(j.get<std::string>()); }
void to_json(json& j, Pooling v) { j = to_string(v); }
void from_json(const json& j, Pooling& v) { v = pooling_from_string(j.get<std::string>()); }
void to_json(json& j, EncoderVariant v) { j = to_string(v); }
void from_json(const json& j, EncoderVariant& v) { v = encoder_variant_from_string(j.get<std::string>()); }

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(CosineHeadConfig, num_classes, embed_dim, gamma)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(ProjectionHeadConfig, in_dim, hidden_dim, out_dim)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(LossConfig, lambda, tau_supcon, alpha, beta, tau_kd, tau_crd, gamma)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(OptimConfig, peak_lr, weight_decay, beta1, beta2, eps, epochs, warmup_epochs,
                                   batch_size)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(AugmentConfig, p_fms, alpha_fms, p_mixup, alpha_mixup, max_roll_frames,
                                   max_mask_bins, p_dir, max_freq_shift_bins, dir_max_gain)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(DataSection, mel_bins, frames, seen_classes, unseen_classes, train_per_class,
                                   val_per_class, pool_per_class, test_per_class, band_width, snr, background,
                                   noise_std, texture_std, tilt_max)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(EncoderSection, embed_dim, width, norm, projection_hidden, projection_dim,
                                   input_offset, input_scale, pooling)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(FewShotSection, shots, repetitions, probe_l2, probe_max_iters, probe_tol)

void to_json(json& j, const EncoderConfig& c) {
  j = json{{"variant", c.variant}, {"mel_bins", c.mel_bins},         {"frames", c.frames},
           {"embed_dim", c.embed_dim}, {"width", c.width},           {"norm", c.norm},
           {"input_offset", c.input_offset}, {"input_scale", c.input_scale},
           {"pooling", c.pooling}};
}

void from_json(const json& j, EncoderConfig& c) {
  j.at("variant").get_to(c.variant);
  j.at("mel_bins").get_to(c.mel_bins);
  j.at("frames").get_to(c.frames);
  j.at("embed_dim").get_to(c.embed_dim);
  j.at("width").get_to(c.width);
  j.at("norm").get_to(c.norm);
  j.at("input_offset").get_to(c.input_offset);
  j.at("input_scale").get_to(c.input_scale);
  j.at("pooling").get_to(c.pooling);
}

void to_json(json& j, const ModelConfig& c) {
  j = json{{"encoder", c.encoder}, {"head", c.head}, {"projection", c.projection}};
}

void from_json(const json& j, ModelConfig& c) {
  j.at("encoder").get_to(c.encoder);
  j.at("head").get_to(c.head);
  j.at("projection").get_to(c.projection);
}

void to_json(json& j, const RunConfig& c) {
  j = json{{"seed", c.seed},
           {"out_dir", c.out_dir},
           {"data", c.data},
           {"teacher", c.teacher},
           {"student", c.student},
           {"losses", c.losses},
           {"optim", {{"teacher_head", c.teacher_head}, {"teacher_joint", c.teacher_joint}, {"distill", c.distill}}},
           {"augment", {{"finetune", c.augment_finetune}, {"distill", c.augment_distill}}},
           {"fewshot", c.fewshot}};
}

void from_json(const json& j, RunConfig& c) {
  j.at("seed").get_to(c.seed);
  j.at("out_dir").get_to(c.out_dir);
  j.at("data").get_to(c.data);
  j.at("teacher").get_to(c.teacher);
  j.at("student").get_to(c.student);
  j.at("losses").get_to(c.losses);
  j.at("optim").at("teacher_head").get_to(c.teacher_head);
  j.at("optim").at("teacher_joint").get_to(c.teacher_joint);
  j.at("optim").at("distill").get_to(c.distill);
  j.at("augment").at("finetune").get_to(c.augment_finetune);
  j.at("augment").at("distill").get_to(c.augment_distill);
  j.at("fewshot").get_to(c.fewshot);
}

namespace {

void reject_unknown(const json& doc, const json& defaults, const std::string& path) {
  if (!doc.is_object()) return;
  for (const auto& [key, value] : doc.items()) {
    const std::string here = path.empty() ? key : path + "." + key;
    if (!defaults.is_object() || !defaults.contains(key)) throw ConfigError("unknown config key '" + here + "'");
    if (value.is_object()) reject_unknown(value, defaults.at(key), here);
  }
}

}  // namespace

RunConfig parse_run_config(const json& doc) {
  if (!doc.is_object()) throw ConfigError("config must be a JSON object");
  json merged = RunConfig{};
  reject_unknown(doc, merged, "");
  merged.merge_patch(doc);
  RunConfig cfg;
  try {
    cfg = merged.get<RunConfig>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config type error: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("invalid config: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

void apply_override(json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override must look like key.path=value: " + assignment);
  const std::string key = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  json value = json::parse(raw, nullptr, false);
  if (value.is_discarded()) value = raw;
  json::json_pointer ptr;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    ptr /= key.substr(start, dot - start);
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  doc[ptr] = value;
}

RunConfig load_run_config(const std::string& path, const std::vector<std::string>& overrides) {
  json doc;
  try {
    doc = json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    throw ConfigError("cannot parse config " + path + ": " + e.what());
  } catch (const MissingInputError& e) {
    throw ConfigError(std::string("missing config: ") + e.what());
  }
  for (const auto& o : overrides) apply_override(doc, o);
  return parse_run_config(doc);
}

}  // namespace scenedistill
