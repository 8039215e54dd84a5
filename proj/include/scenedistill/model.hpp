#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "scenedistill/layers.hpp"
#include "scenedistill/param_store.hpp"
#include "scenedistill/spectrogram.hpp"

namespace scenedistill {

class RngStream;

enum class EncoderVariant { teacher_toy, student_toy };
enum class EmbeddingNorm { none, layer_norm, batch_norm };
/// global averages the last feature map over mel and time; time keeps the
/// mel axis and averages over frames only.
enum class Pooling { global, time };

struct EncoderConfig {
  EncoderVariant variant = EncoderVariant::teacher_toy;
  std::size_t mel_bins = 64;
  std::size_t frames = 64;
  std::size_t embed_dim = 768;
  /// Channel multiplier. The student size variants are widths 1..5.
  std::size_t width = 1;
  EmbeddingNorm norm = EmbeddingNorm::none;
  /// Fixed input standardization: (x - input_offset) * input_scale.
  double input_offset = -40.0;
  double input_scale = 0.05;
  Pooling pooling = Pooling::global;

  /// Width of the pooled vector fed to the embedding layer.
  std::size_t pooled_dim() const;
  /// Output channels of each 3x3 stride-2 conv block.
  std::vector<std::size_t> conv_channels() const;
};

struct CosineHeadConfig {
  std::size_t num_classes = 10;
  std::size_t embed_dim = 768;
  double gamma = 56.0;
};

struct ProjectionHeadConfig {
  std::size_t in_dim = 768;
  std::size_t hidden_dim = 768;
  std::size_t out_dim = 128;
};

struct ModelConfig {
  EncoderConfig encoder;
  CosineHeadConfig head;
  ProjectionHeadConfig projection;

  /// Throws std::invalid_argument on inconsistent wiring.
  void validate() const;
};

ModelConfig default_teacher_config(std::size_t num_classes);
ModelConfig default_student_config(std::size_t num_classes);

/// Peak learning rate used for student size variant `index` (0..4).
double student_variant_peak_lr(std::size_t index);

struct ForwardOptions {
  NormMode mode = NormMode::eval;
  bool logits = true;
  bool projection = false;
};

/// Everything the backward pass needs, plus the exposed taps.
struct ModelForward {
  Tensor2 pre_norm;   // pooled + linear, before the embedding norm
  Tensor2 embedding;  // after the embedding norm (== pre_norm without one)
  Tensor2 logits;
  Tensor2 projection;

  NormMode mode = NormMode::eval;
  std::vector<FeatureMap> activations;  // [0] = input, [i+1] = block i output
  Tensor2 pooled;
  NormCache norm_cache;
  CosineHeadCache head_cache;
  MlpCache proj_cache;
  std::size_t degenerate_rows = 0;
};

/// Conv encoder + cosine classification head + MLP projection head over one
/// ParamStore. Entry names: encoder.*, cls.weight, proj.*.
class SceneModel {
 public:
  SceneModel() = default;
  SceneModel(ModelConfig cfg, RngStream& rng);
  SceneModel(ModelConfig cfg, ParamStore params);

  const ModelConfig& config() const { return cfg_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  /// Re-draw the classification and projection heads.
  void reinit_heads(RngStream& rng);

  /// Train mode updates batch-norm running statistics, so it mutates.
  ModelForward forward(const std::vector<MelSpectrogram>& batch, const ForwardOptions& opts);
  ModelForward forward_eval(const std::vector<MelSpectrogram>& batch, bool want_projection = false) const;

  /// Accumulates parameter gradients. Either upstream may be empty
  /// (0 rows) when that head did not contribute. The encoder is skipped
  /// when `through_encoder` is false.
  void backward(const ModelForward& fwd, const Tensor2& grad_logits, const Tensor2& grad_projection,
                bool through_encoder = true);

  /// Projection head applied to an arbitrary embedding batch.
  Tensor2 project(const Tensor2& embedding, MlpCache* cache = nullptr) const;

 private:
  ModelForward run_forward(const std::vector<MelSpectrogram>& batch, const ForwardOptions& opts, ParamStore& store) const;
  void init(RngStream& rng);
  void init_heads(RngStream& rng);

  ModelConfig cfg_;
  ParamStore params_;
};

FeatureMap to_feature_map(const std::vector<MelSpectrogram>& batch, const EncoderConfig& cfg);

std::string to_string(EncoderVariant v);
std::string to_string(EmbeddingNorm n);
EncoderVariant encoder_variant_from_string(const std::string& s);
EmbeddingNorm embedding_norm_from_string(const std::string& s);
std::string to_string(Pooling p);
Pooling pooling_from_string(const std::string& s);

}  // namespace scenedistill
