#include "scenedistill/model.hpp"

#include <array>
#include <stdexcept>

#include "scenedistill/rng.hpp"

namespace scenedistill {

std::vector<std::size_t> EncoderConfig::conv_channels() const {
  if (variant == EncoderVariant::teacher_toy) return {8 * width, 16 * width, 32 * width};
  return {4 * width, 8 * width};
}

std::size_t EncoderConfig::pooled_dim() const {
  const std::size_t c = conv_channels().back();
  if (pooling == Pooling::global) return c;
  std::size_t h = mel_bins;
  for (std::size_t i = 0; i < conv_channels().size(); ++i) h = conv_out_size(h);
  return c * h;
}

void ModelConfig::validate() const {
  const auto& e = encoder;
  if (e.mel_bins < 1 || e.frames < 1) throw std::invalid_argument("encoder: mel_bins and frames must be >= 1");
  if (e.embed_dim < 1 || e.width < 1) throw std::invalid_argument("encoder: embed_dim and width must be >= 1");
  if (e.norm == EmbeddingNorm::layer_norm && e.embed_dim < 2)
    throw std::invalid_argument("encoder: layer norm needs embed_dim >= 2");
  if (!(e.input_scale > 0.0)) throw std::invalid_argument("encoder: input_scale must be positive");
  if (head.num_classes < 1) throw std::invalid_argument("head: num_classes must be >= 1");
  if (head.embed_dim != e.embed_dim) throw std::invalid_argument("head: embed_dim does not match encoder embed_dim");
  if (!(head.gamma > 0.0)) throw std::invalid_argument("head: gamma must be positive");
  if (projection.in_dim != e.embed_dim)
    throw std::invalid_argument("projection: in_dim does not match encoder embed_dim");
  if (projection.hidden_dim < 1 || projection.out_dim < 1)
    throw std::invalid_argument("projection: dims must be >= 1");
}

ModelConfig default_teacher_config(std::size_t num_classes) {
  ModelConfig c;
  c.encoder.variant = EncoderVariant::teacher_toy;
  c.encoder.embed_dim = 768;
  c.encoder.norm = EmbeddingNorm::none;
  c.head = {num_classes, 768, 56.0};
  c.projection = {768, 768, 128};
  return c;
}

ModelConfig default_student_config(std::size_t num_classes) {
  ModelConfig c;
  c.encoder.variant = EncoderVariant::student_toy;
  c.encoder.embed_dim = 128;
  c.encoder.width = 5;
  c.encoder.norm = EmbeddingNorm::layer_norm;
  c.encoder.pooling = Pooling::time;
  c.head = {num_classes, 128, 56.0};
  c.projection = {128, 128, 128};
  return c;
}

double student_variant_peak_lr(std::size_t index) {
  static constexpr std::array<double, 5> kPeak{0.04, 0.04, 0.03, 0.02, 0.01};
  if (index >= kPeak.size()) throw std::out_of_range("student variant index must be in 0..4");
  return kPeak[index];
}

SceneModel::SceneModel(ModelConfig cfg, RngStream& rng) : cfg_(std::move(cfg)) {
  cfg_.validate();
  init(rng);
}

SceneModel::SceneModel(ModelConfig cfg, ParamStore params) : cfg_(std::move(cfg)), params_(std::move(params)) {
  cfg_.validate();
  // Shape check against a freshly wired store.
  RngStream probe(0, 0);
  SceneModel ref(cfg_, probe);
  for (const auto& [name, e] : ref.params_.entries()) {
    if (!params_.contains(name)) throw std::invalid_argument("checkpoint is missing entry '" + name + "'");
    if (!params_.at(name).value.same_shape(e.value))
      throw std::invalid_argument("checkpoint entry '" + name + "' has the wrong shape");
  }
  if (params_.entries().size() != ref.params_.entries().size())
    throw std::invalid_argument("checkpoint has unexpected entries");
}

void SceneModel::init(RngStream& rng) {
  RngStream enc_rng = rng.derive("encoder");
  const auto channels = cfg_.encoder.conv_channels();
  std::size_t in_c = 1;
  for (std::size_t i = 0; i < channels.size(); ++i) {
    const std::string p = "encoder.conv" + std::to_string(i);
    params_.add_glorot(p + ".weight", channels[i], in_c * 9, in_c * 9, channels[i] * 9, enc_rng);
    params_.add(p + ".bias", 1, channels[i]);
    in_c = channels[i];
  }
  const std::size_t d = cfg_.encoder.embed_dim;
  const std::size_t pooled = cfg_.encoder.pooled_dim();
  params_.add_glorot("encoder.fc.weight", d, pooled, pooled, d, enc_rng);
  params_.add("encoder.fc.bias", 1, d);
  if (cfg_.encoder.norm != EmbeddingNorm::none) {
    params_.add("encoder.norm.gain", 1, d, 1.0);
    params_.add("encoder.norm.bias", 1, d);
    if (cfg_.encoder.norm == EmbeddingNorm::batch_norm) {
      params_.add_buffer("encoder.norm.running_mean", 1, d, 0.0);
      params_.add_buffer("encoder.norm.running_var", 1, d, 1.0);
    }
  }
  init_heads(rng);
}

void SceneModel::init_heads(RngStream& rng) {
  RngStream head_rng = rng.derive("heads");
  const auto& h = cfg_.head;
  const auto& p = cfg_.projection;
  params_.add_glorot("cls.weight", h.num_classes, h.embed_dim, h.embed_dim, h.num_classes, head_rng);
  params_.add_glorot("proj.fc1.weight", p.hidden_dim, p.in_dim, p.in_dim, p.hidden_dim, head_rng);
  params_.add("proj.fc1.bias", 1, p.hidden_dim);
  params_.add_glorot("proj.fc2.weight", p.out_dim, p.hidden_dim, p.hidden_dim, p.out_dim, head_rng);
  params_.add("proj.fc2.bias", 1, p.out_dim);
}

void SceneModel::reinit_heads(RngStream& rng) {
  for (auto it = params_.entries().begin(); it != params_.entries().end();) {
    if (it->first.starts_with("cls.") || it->first.starts_with("proj."))
      it = params_.entries().erase(it);
    else
      ++it;
  }
  init_heads(rng);
}

FeatureMap to_feature_map(const std::vector<MelSpectrogram>& batch, const EncoderConfig& cfg) {
  FeatureMap x(batch.size(), 1, cfg.mel_bins, cfg.frames);
  const std::size_t n = cfg.mel_bins * cfg.frames;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    if (batch[b].mel_bins != cfg.mel_bins || batch[b].frames != cfg.frames)
      throw std::invalid_argument("spectrogram shape does not match encoder configuration");
    for (std::size_t i = 0; i < n; ++i)
      x.data[b * n + i] = (batch[b].values[i] - cfg.input_offset) * cfg.input_scale;
  }
  return x;
}

ModelForward SceneModel::forward(const std::vector<MelSpectrogram>& batch, const ForwardOptions& opts) {
  return run_forward(batch, opts, params_);
}

ModelForward SceneModel::forward_eval(const std::vector<MelSpectrogram>& batch, bool want_projection) const {
  // Eval mode never writes to the store (running stats are only read).
  return run_forward(batch, {NormMode::eval, true, want_projection}, const_cast<ParamStore&>(params_));
}

ModelForward SceneModel::run_forward(const std::vector<MelSpectrogram>& batch, const ForwardOptions& opts,
                                     ParamStore& store) const {
  ModelForward f;
  f.mode = opts.mode;
  f.activations.push_back(to_feature_map(batch, cfg_.encoder));
  const std::size_t blocks = cfg_.encoder.conv_channels().size();
  for (std::size_t i = 0; i < blocks; ++i) {
    const std::string p = "encoder.conv" + std::to_string(i);
    FeatureMap y = conv3x3s2_forward(f.activations.back(), store.value(p + ".weight"), store.value(p + ".bias"));
    relu_inplace(y);
    f.activations.push_back(std::move(y));
  }
  f.pooled = cfg_.encoder.pooling == Pooling::global ? global_avg_pool(f.activations.back())
                                                      : time_avg_pool(f.activations.back());
  f.pre_norm = dense_forward(f.pooled, store.value("encoder.fc.weight"), store.value("encoder.fc.bias"));

  switch (cfg_.encoder.norm) {
    case EmbeddingNorm::none:
      f.embedding = f.pre_norm;
      break;
    case EmbeddingNorm::layer_norm:
      f.embedding = layer_norm_forward(f.pre_norm, store.value("encoder.norm.gain"), store.value("encoder.norm.bias"),
                                       kNormLayerEps, &f.norm_cache);
      break;
    case EmbeddingNorm::batch_norm:
      f.embedding = batch_norm_forward(
          f.pre_norm, store.value("encoder.norm.gain"), store.value("encoder.norm.bias"),
          BatchNormState{store.value("encoder.norm.running_mean"), store.value("encoder.norm.running_var")}, opts.mode,
          kNormLayerEps, &f.norm_cache);
      break;
  }

  if (opts.logits)
    f.logits = cosine_head_forward(f.embedding, store.value("cls.weight"), cfg_.head.gamma, &f.head_cache,
                                   &f.degenerate_rows);
  if (opts.projection) f.projection = project(f.embedding, &f.proj_cache);
  return f;
}

Tensor2 SceneModel::project(const Tensor2& embedding, MlpCache* cache) const {
  return mlp_forward(embedding,
                     {params_.value("proj.fc1.weight"), params_.value("proj.fc1.bias"),
                      params_.value("proj.fc2.weight"), params_.value("proj.fc2.bias")},
                     cache);
}

void SceneModel::backward(const ModelForward& fwd, const Tensor2& grad_logits, const Tensor2& grad_projection,
                          bool through_encoder) {
  const std::size_t n = fwd.embedding.rows;
  Tensor2 g_emb(n, cfg_.encoder.embed_dim);
  if (grad_logits.rows > 0) {
    Tensor2 g = cosine_head_backward(grad_logits, fwd.head_cache, params_.grad("cls.weight"));
    for (std::size_t i = 0; i < g.size(); ++i) g_emb.data[i] += g.data[i];
  }
  if (grad_projection.rows > 0) {
    Tensor2 g = mlp_backward(
        grad_projection, fwd.proj_cache,
        {params_.value("proj.fc1.weight"), params_.value("proj.fc1.bias"), params_.value("proj.fc2.weight"),
         params_.value("proj.fc2.bias")},
        {params_.grad("proj.fc1.weight"), params_.grad("proj.fc1.bias"), params_.grad("proj.fc2.weight"),
         params_.grad("proj.fc2.bias")});
    for (std::size_t i = 0; i < g.size(); ++i) g_emb.data[i] += g.data[i];
  }
  if (!through_encoder) return;

  Tensor2 g_pre;
  switch (cfg_.encoder.norm) {
    case EmbeddingNorm::none:
      g_pre = std::move(g_emb);
      break;
    case EmbeddingNorm::layer_norm:
      g_pre = layer_norm_backward(g_emb, fwd.norm_cache, params_.value("encoder.norm.gain"),
                                  params_.grad("encoder.norm.gain"), params_.grad("encoder.norm.bias"));
      break;
    case EmbeddingNorm::batch_norm:
      g_pre = batch_norm_backward(g_emb, fwd.norm_cache, fwd.mode, params_.value("encoder.norm.gain"),
                                  params_.grad("encoder.norm.gain"), params_.grad("encoder.norm.bias"));
      break;
  }
  Tensor2 g_pool = dense_backward(g_pre, fwd.pooled, params_.value("encoder.fc.weight"),
                                  params_.grad("encoder.fc.weight"), params_.grad("encoder.fc.bias"));
  const FeatureMap& last = fwd.activations.back();
  FeatureMap g = cfg_.encoder.pooling == Pooling::global
                     ? global_avg_pool_backward(g_pool, last.height, last.width)
                     : time_avg_pool_backward(g_pool, last.channels, last.height, last.width);
  for (std::size_t i = fwd.activations.size() - 1; i >= 1; --i) {
    relu_backward_inplace(g, fwd.activations[i]);
    const std::string p = "encoder.conv" + std::to_string(i - 1);
    g = conv3x3s2_backward(g, fwd.activations[i - 1], params_.value(p + ".weight"), params_.grad(p + ".weight"),
                           params_.grad(p + ".bias"), i > 1);
  }
}

std::string to_string(EncoderVariant v) { return v == EncoderVariant::teacher_toy ? "teacher_toy" : "student_toy"; }

std::string to_string(EmbeddingNorm n) {
  switch (n) {
    case EmbeddingNorm::none: return "none";
    case EmbeddingNorm::layer_norm: return "layer_norm";
    case EmbeddingNorm::batch_norm: return "batch_norm";
  }
  return "none";
}

EncoderVariant encoder_variant_from_string(const std::string& s) {
  if (s == "teacher_toy") return EncoderVariant::teacher_toy;
  if (s == "student_toy") return EncoderVariant::student_toy;
  throw std::invalid_argument("unknown encoder variant '" + s + "'");
}

EmbeddingNorm embedding_norm_from_string(const std::string& s) {
  if (s == "none") return EmbeddingNorm::none;
  if (s == "layer_norm") return EmbeddingNorm::layer_norm;
  if (s == "batch_norm") return EmbeddingNorm::batch_norm;
  throw std::invalid_argument("unknown embedding norm '" + s + "'");
}

std::string to_string(Pooling p) { return p == Pooling::global ? "global" : "time"; }

Pooling pooling_from_string(const std::string& s) {
  if (s == "global") return Pooling::global;
  if (s == "time") return Pooling::time;
  throw std::invalid_argument("unknown pooling '" + s + "'");
}

}  // namespace scenedistill
