#pragma once

#include <cstddef>
#include <vector>

#include "scenedistill/numerics.hpp"
#include "scenedistill/tensor.hpp"

namespace scenedistill {

// Forward/backward primitives. Backward functions accumulate (+=) into the
// supplied parameter-gradient tensors and return the input gradient.

inline constexpr double kNormLayerEps = 1e-10;

// --- cosine classification head ------------------------------------------

struct CosineHeadCache {
  RowNormalized x;
  RowNormalized w;
  double gamma = 1.0;
};

/// logits[b][c] = gamma * cos(x_b, w_c). A zero-norm embedding or weight
/// row yields cosine 0 for its pairs; `degenerate` counts such rows.
Tensor2 cosine_head_forward(const Tensor2& x, const Tensor2& weight, double gamma, CosineHeadCache* cache = nullptr,
                            std::size_t* degenerate = nullptr);
Tensor2 cosine_head_backward(const Tensor2& upstream, const CosineHeadCache& cache, Tensor2& grad_weight);

// --- dense / mlp ------------------------------------------------------------

/// y = x W^T + b with W: out x in, b: 1 x out.
Tensor2 dense_forward(const Tensor2& x, const Tensor2& weight, const Tensor2& bias);
Tensor2 dense_backward(const Tensor2& upstream, const Tensor2& x, const Tensor2& weight, Tensor2& grad_weight,
                       Tensor2& grad_bias);

Tensor2 relu(const Tensor2& x);
/// Gradient of relu given its pre-activation.
Tensor2 relu_backward(const Tensor2& upstream, const Tensor2& pre);

struct MlpWeights {
  const Tensor2& w1;
  const Tensor2& b1;
  const Tensor2& w2;
  const Tensor2& b2;
};
struct MlpGrads {
  Tensor2& w1;
  Tensor2& b1;
  Tensor2& w2;
  Tensor2& b2;
};
struct MlpCache {
  Tensor2 x;
  Tensor2 hidden_pre;
  Tensor2 hidden;
};

/// out = W2 relu(W1 x + b1) + b2
Tensor2 mlp_forward(const Tensor2& x, const MlpWeights& w, MlpCache* cache = nullptr);
Tensor2 mlp_backward(const Tensor2& upstream, const MlpCache& cache, const MlpWeights& w, const MlpGrads& g);

// --- normalization ----------------------------------------------------------

struct NormCache {
  Tensor2 x_hat;
  std::vector<double> rstd;  // per row (layer norm) or per feature (batch norm)
};

/// Per-row standardization followed by per-feature gain/bias.
Tensor2 layer_norm_forward(const Tensor2& x, const Tensor2& gain, const Tensor2& bias, double eps = kNormLayerEps,
                           NormCache* cache = nullptr);
Tensor2 layer_norm_backward(const Tensor2& upstream, const NormCache& cache, const Tensor2& gain, Tensor2& grad_gain,
                            Tensor2& grad_bias);

enum class NormMode { train, eval };

struct BatchNormState {
  Tensor2& running_mean;
  Tensor2& running_var;
  double momentum = 0.1;
};

/// Train mode standardizes each feature over the batch (B >= 2) and updates
/// the running statistics; eval mode uses the running statistics.
Tensor2 batch_norm_forward(const Tensor2& x, const Tensor2& gain, const Tensor2& bias, BatchNormState state,
                           NormMode mode, double eps = kNormLayerEps, NormCache* cache = nullptr);
Tensor2 batch_norm_backward(const Tensor2& upstream, const NormCache& cache, NormMode mode, const Tensor2& gain,
                            Tensor2& grad_gain, Tensor2& grad_bias);

// --- convolution ------------------------------------------------------------

/// Batch of C x H x W feature maps, contiguous per sample.
struct FeatureMap {
  std::size_t batch = 0, channels = 0, height = 0, width = 0;
  std::vector<double> data;

  FeatureMap() = default;
  FeatureMap(std::size_t b, std::size_t c, std::size_t h, std::size_t w)
      : batch(b), channels(c), height(h), width(w), data(b * c * h * w, 0.0) {}
  double& at(std::size_t b, std::size_t c, std::size_t y, std::size_t x) {
    return data[((b * channels + c) * height + y) * width + x];
  }
  double at(std::size_t b, std::size_t c, std::size_t y, std::size_t x) const {
    return data[((b * channels + c) * height + y) * width + x];
  }
};

/// Output spatial size of a 3x3, stride-2, pad-1 convolution.
constexpr std::size_t conv_out_size(std::size_t n) { return (n - 1) / 2 + 1; }

/// 3x3 stride-2 pad-1 convolution; weight is out x (in * 9), bias 1 x out.
FeatureMap conv3x3s2_forward(const FeatureMap& x, const Tensor2& weight, const Tensor2& bias);
/// Returns the input gradient only when `want_input_grad`.
FeatureMap conv3x3s2_backward(const FeatureMap& upstream, const FeatureMap& x, const Tensor2& weight,
                              Tensor2& grad_weight, Tensor2& grad_bias, bool want_input_grad = true);

void relu_inplace(FeatureMap& x);
/// Zeroes upstream where the post-activation output is not positive.
void relu_backward_inplace(FeatureMap& upstream, const FeatureMap& activated);

/// Global average pool over H x W -> B x C.
Tensor2 global_avg_pool(const FeatureMap& x);
FeatureMap global_avg_pool_backward(const Tensor2& upstream, std::size_t height, std::size_t width);
/// Average over W only -> B x (C * H), column index c * H + y.
Tensor2 time_avg_pool(const FeatureMap& x);
FeatureMap time_avg_pool_backward(const Tensor2& upstream, std::size_t channels, std::size_t height,
                                  std::size_t width);

}  // namespace scenedistill
