#include "scenedistill/layers.hpp"

#include <cmath>
#include <stdexcept>

namespace scenedistill {

// --- cosine head --------------------------------------------------------------

Tensor2 cosine_head_forward(const Tensor2& x, const Tensor2& weight, double gamma, CosineHeadCache* cache,
                            std::size_t* degenerate) {
  if (x.cols != weight.cols) throw std::invalid_argument("cosine_head_forward: embedding width mismatch");
  if (!(gamma > 0.0)) throw std::invalid_argument("cosine_head_forward: gamma must be positive");
  auto xn = normalize_rows(x);
  auto wn = normalize_rows(weight);
  Tensor2 logits = matmul_nt(xn.unit, wn.unit);
  for (double& v : logits.data) v *= gamma;
  if (degenerate) *degenerate = xn.degenerate_rows + wn.degenerate_rows;
  if (cache) *cache = CosineHeadCache{std::move(xn), std::move(wn), gamma};
  return logits;
}

Tensor2 cosine_head_backward(const Tensor2& upstream, const CosineHeadCache& cache, Tensor2& grad_weight) {
  Tensor2 g_xu = matmul(upstream, cache.w.unit);     // B x d
  Tensor2 g_wu = matmul_tn(upstream, cache.x.unit);  // C x d
  for (double& v : g_xu.data) v *= cache.gamma;
  for (double& v : g_wu.data) v *= cache.gamma;
  Tensor2 gw = normalize_rows_backward(cache.w, g_wu);
  for (std::size_t i = 0; i < gw.size(); ++i) grad_weight.data[i] += gw.data[i];
  return normalize_rows_backward(cache.x, g_xu);
}

// --- dense / mlp --------------------------------------------------------------

Tensor2 dense_forward(const Tensor2& x, const Tensor2& weight, const Tensor2& bias) {
  Tensor2 y = matmul_nt(x, weight);
  for (std::size_t r = 0; r < y.rows; ++r)
    for (std::size_t c = 0; c < y.cols; ++c) y(r, c) += bias.data[c];
  return y;
}

Tensor2 dense_backward(const Tensor2& upstream, const Tensor2& x, const Tensor2& weight, Tensor2& grad_weight,
                       Tensor2& grad_bias) {
  Tensor2 gw = matmul_tn(upstream, x);
  for (std::size_t i = 0; i < gw.size(); ++i) grad_weight.data[i] += gw.data[i];
  for (std::size_t r = 0; r < upstream.rows; ++r)
    for (std::size_t c = 0; c < upstream.cols; ++c) grad_bias.data[c] += upstream(r, c);
  return matmul(upstream, weight);
}

Tensor2 relu(const Tensor2& x) {
  Tensor2 y = x;
  for (double& v : y.data) v = v > 0.0 ? v : 0.0;
  return y;
}

Tensor2 relu_backward(const Tensor2& upstream, const Tensor2& pre) {
  Tensor2 g = upstream;
  for (std::size_t i = 0; i < g.size(); ++i)
    if (!(pre.data[i] > 0.0)) g.data[i] = 0.0;
  return g;
}

Tensor2 mlp_forward(const Tensor2& x, const MlpWeights& w, MlpCache* cache) {
  Tensor2 pre = dense_forward(x, w.w1, w.b1);
  Tensor2 hidden = relu(pre);
  Tensor2 out = dense_forward(hidden, w.w2, w.b2);
  if (cache) *cache = MlpCache{x, std::move(pre), std::move(hidden)};
  return out;
}

Tensor2 mlp_backward(const Tensor2& upstream, const MlpCache& cache, const MlpWeights& w, const MlpGrads& g) {
  Tensor2 g_hidden = dense_backward(upstream, cache.hidden, w.w2, g.w2, g.b2);
  Tensor2 g_pre = relu_backward(g_hidden, cache.hidden_pre);
  return dense_backward(g_pre, cache.x, w.w1, g.w1, g.b1);
}

// --- normalization --------------------------------------------------------------

Tensor2 layer_norm_forward(const Tensor2& x, const Tensor2& gain, const Tensor2& bias, double eps, NormCache* cache) {
  if (x.cols < 2) throw std::invalid_argument("layer_norm_forward: need at least 2 features");
  const double d = static_cast<double>(x.cols);
  Tensor2 x_hat(x.rows, x.cols);
  std::vector<double> rstd(x.rows);
  for (std::size_t r = 0; r < x.rows; ++r) {
    auto row = x.row(r);
    double mean = 0.0;
    for (double v : row) mean += v;
    mean /= d;
    double var = 0.0;
    for (double v : row) var += (v - mean) * (v - mean);
    var /= d;
    rstd[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t c = 0; c < x.cols; ++c) x_hat(r, c) = (row[c] - mean) * rstd[r];
  }
  Tensor2 y(x.rows, x.cols);
  for (std::size_t r = 0; r < x.rows; ++r)
    for (std::size_t c = 0; c < x.cols; ++c) y(r, c) = x_hat(r, c) * gain.data[c] + bias.data[c];
  if (cache) *cache = NormCache{std::move(x_hat), std::move(rstd)};
  return y;
}

Tensor2 layer_norm_backward(const Tensor2& upstream, const NormCache& cache, const Tensor2& gain, Tensor2& grad_gain,
                            Tensor2& grad_bias) {
  const std::size_t n = upstream.rows, d = upstream.cols;
  Tensor2 dx(n, d);
  std::vector<double> g_hat(d);
  for (std::size_t r = 0; r < n; ++r) {
    double mean_g = 0.0, mean_gx = 0.0;
    for (std::size_t c = 0; c < d; ++c) {
      const double up = upstream(r, c);
      grad_gain.data[c] += up * cache.x_hat(r, c);
      grad_bias.data[c] += up;
      g_hat[c] = up * gain.data[c];
      mean_g += g_hat[c];
      mean_gx += g_hat[c] * cache.x_hat(r, c);
    }
    mean_g /= static_cast<double>(d);
    mean_gx /= static_cast<double>(d);
    for (std::size_t c = 0; c < d; ++c) dx(r, c) = cache.rstd[r] * (g_hat[c] - mean_g - cache.x_hat(r, c) * mean_gx);
  }
  return dx;
}

Tensor2 batch_norm_forward(const Tensor2& x, const Tensor2& gain, const Tensor2& bias, BatchNormState state,
                           NormMode mode, double eps, NormCache* cache) {
  const std::size_t n = x.rows, d = x.cols;
  Tensor2 x_hat(n, d);
  std::vector<double> rstd(d);
  if (mode == NormMode::train) {
    if (n < 2) throw std::invalid_argument("batch_norm_forward: train mode needs a batch of at least 2");
    for (std::size_t c = 0; c < d; ++c) {
      double mean = 0.0;
      for (std::size_t r = 0; r < n; ++r) mean += x(r, c);
      mean /= static_cast<double>(n);
      double var = 0.0;
      for (std::size_t r = 0; r < n; ++r) var += (x(r, c) - mean) * (x(r, c) - mean);
      var /= static_cast<double>(n);
      rstd[c] = 1.0 / std::sqrt(var + eps);
      for (std::size_t r = 0; r < n; ++r) x_hat(r, c) = (x(r, c) - mean) * rstd[c];
      const double unbiased = var * static_cast<double>(n) / static_cast<double>(n - 1);
      state.running_mean.data[c] = (1.0 - state.momentum) * state.running_mean.data[c] + state.momentum * mean;
      state.running_var.data[c] = (1.0 - state.momentum) * state.running_var.data[c] + state.momentum * unbiased;
    }
  } else {
    for (std::size_t c = 0; c < d; ++c) {
      rstd[c] = 1.0 / std::sqrt(state.running_var.data[c] + eps);
      for (std::size_t r = 0; r < n; ++r) x_hat(r, c) = (x(r, c) - state.running_mean.data[c]) * rstd[c];
    }
  }
  Tensor2 y(n, d);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < d; ++c) y(r, c) = x_hat(r, c) * gain.data[c] + bias.data[c];
  if (cache) *cache = NormCache{std::move(x_hat), std::move(rstd)};
  return y;
}

Tensor2 batch_norm_backward(const Tensor2& upstream, const NormCache& cache, NormMode mode, const Tensor2& gain,
                            Tensor2& grad_gain, Tensor2& grad_bias) {
  const std::size_t n = upstream.rows, d = upstream.cols;
  Tensor2 dx(n, d);
  for (std::size_t c = 0; c < d; ++c) {
    double sum_g = 0.0, sum_gx = 0.0;
    for (std::size_t r = 0; r < n; ++r) {
      const double up = upstream(r, c);
      grad_gain.data[c] += up * cache.x_hat(r, c);
      grad_bias.data[c] += up;
      const double gh = up * gain.data[c];
      sum_g += gh;
      sum_gx += gh * cache.x_hat(r, c);
    }
    for (std::size_t r = 0; r < n; ++r) {
      const double gh = upstream(r, c) * gain.data[c];
      if (mode == NormMode::train) {
        dx(r, c) = cache.rstd[c] * (gh - sum_g / static_cast<double>(n) -
                                    cache.x_hat(r, c) * sum_gx / static_cast<double>(n));
      } else {
        dx(r, c) = cache.rstd[c] * gh;
      }
    }
  }
  return dx;
}

// --- convolution -----------------------------------------------------------------

namespace {

// Column buffer (in*9) x (oh*ow) for one sample.
void im2col(const FeatureMap& x, std::size_t b, std::size_t oh, std::size_t ow, std::vector<double>& col) {
  const std::size_t p = oh * ow;
  col.assign(x.channels * 9 * p, 0.0);
  for (std::size_t ic = 0; ic < x.channels; ++ic) {
    for (std::size_t ky = 0; ky < 3; ++ky) {
      for (std::size_t kx = 0; kx < 3; ++kx) {
        double* dst = col.data() + ((ic * 9) + ky * 3 + kx) * p;
        for (std::size_t oy = 0; oy < oh; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(2 * oy + ky) - 1;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(x.height)) continue;
          for (std::size_t ox = 0; ox < ow; ++ox) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(2 * ox + kx) - 1;
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(x.width)) continue;
            dst[oy * ow + ox] = x.at(b, ic, static_cast<std::size_t>(iy), static_cast<std::size_t>(ix));
          }
        }
      }
    }
  }
}

void col2im_add(const std::vector<double>& col, std::size_t b, std::size_t oh, std::size_t ow, FeatureMap& x) {
  const std::size_t p = oh * ow;
  for (std::size_t ic = 0; ic < x.channels; ++ic) {
    for (std::size_t ky = 0; ky < 3; ++ky) {
      for (std::size_t kx = 0; kx < 3; ++kx) {
        const double* src = col.data() + ((ic * 9) + ky * 3 + kx) * p;
        for (std::size_t oy = 0; oy < oh; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(2 * oy + ky) - 1;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(x.height)) continue;
          for (std::size_t ox = 0; ox < ow; ++ox) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(2 * ox + kx) - 1;
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(x.width)) continue;
            x.at(b, ic, static_cast<std::size_t>(iy), static_cast<std::size_t>(ix)) += src[oy * ow + ox];
          }
        }
      }
    }
  }
}

}  // namespace

FeatureMap conv3x3s2_forward(const FeatureMap& x, const Tensor2& weight, const Tensor2& bias) {
  if (weight.cols != x.channels * 9) throw std::invalid_argument("conv3x3s2_forward: input channel mismatch");
  const std::size_t oc_n = weight.rows;
  const std::size_t oh = conv_out_size(x.height), ow = conv_out_size(x.width), p = oh * ow;
  const std::size_t k = weight.cols;
  FeatureMap y(x.batch, oc_n, oh, ow);
  std::vector<double> col;
  for (std::size_t b = 0; b < x.batch; ++b) {
    im2col(x, b, oh, ow, col);
    for (std::size_t oc = 0; oc < oc_n; ++oc) {
      double* out = y.data.data() + (b * oc_n + oc) * p;
      std::fill(out, out + p, bias.data[oc]);
      const double* w = weight.data.data() + oc * k;
      for (std::size_t kk = 0; kk < k; ++kk) {
        const double wk = w[kk];
        const double* c = col.data() + kk * p;
        for (std::size_t i = 0; i < p; ++i) out[i] += wk * c[i];
      }
    }
  }
  return y;
}

FeatureMap conv3x3s2_backward(const FeatureMap& upstream, const FeatureMap& x, const Tensor2& weight,
                              Tensor2& grad_weight, Tensor2& grad_bias, bool want_input_grad) {
  const std::size_t oc_n = weight.rows;
  const std::size_t oh = upstream.height, ow = upstream.width, p = oh * ow;
  const std::size_t k = weight.cols;
  FeatureMap dx;
  if (want_input_grad) dx = FeatureMap(x.batch, x.channels, x.height, x.width);
  std::vector<double> col, dcol;
  for (std::size_t b = 0; b < x.batch; ++b) {
    im2col(x, b, oh, ow, col);
    if (want_input_grad) dcol.assign(k * p, 0.0);
    for (std::size_t oc = 0; oc < oc_n; ++oc) {
      const double* up = upstream.data.data() + (b * oc_n + oc) * p;
      double bsum = 0.0;
      for (std::size_t i = 0; i < p; ++i) bsum += up[i];
      grad_bias.data[oc] += bsum;
      double* gw = grad_weight.data.data() + oc * k;
      const double* w = weight.data.data() + oc * k;
      for (std::size_t kk = 0; kk < k; ++kk) {
        const double* c = col.data() + kk * p;
        double s = 0.0;
        for (std::size_t i = 0; i < p; ++i) s += up[i] * c[i];
        gw[kk] += s;
        if (want_input_grad) {
          double* dc = dcol.data() + kk * p;
          const double wk = w[kk];
          for (std::size_t i = 0; i < p; ++i) dc[i] += wk * up[i];
        }
      }
    }
    if (want_input_grad) col2im_add(dcol, b, oh, ow, dx);
  }
  return dx;
}

void relu_inplace(FeatureMap& x) {
  for (double& v : x.data) v = v > 0.0 ? v : 0.0;
}

void relu_backward_inplace(FeatureMap& upstream, const FeatureMap& activated) {
  for (std::size_t i = 0; i < upstream.data.size(); ++i)
    if (!(activated.data[i] > 0.0)) upstream.data[i] = 0.0;
}

Tensor2 global_avg_pool(const FeatureMap& x) {
  const std::size_t p = x.height * x.width;
  Tensor2 out(x.batch, x.channels);
  for (std::size_t b = 0; b < x.batch; ++b)
    for (std::size_t c = 0; c < x.channels; ++c) {
      const double* src = x.data.data() + (b * x.channels + c) * p;
      double s = 0.0;
      for (std::size_t i = 0; i < p; ++i) s += src[i];
      out(b, c) = s / static_cast<double>(p);
    }
  return out;
}

FeatureMap global_avg_pool_backward(const Tensor2& upstream, std::size_t height, std::size_t width) {
  FeatureMap dx(upstream.rows, upstream.cols, height, width);
  const std::size_t p = height * width;
  for (std::size_t b = 0; b < upstream.rows; ++b)
    for (std::size_t c = 0; c < upstream.cols; ++c) {
      double* dst = dx.data.data() + (b * upstream.cols + c) * p;
      std::fill(dst, dst + p, upstream(b, c) / static_cast<double>(p));
    }
  return dx;
}

Tensor2 time_avg_pool(const FeatureMap& x) {
  Tensor2 out(x.batch, x.channels * x.height);
  for (std::size_t b = 0; b < x.batch; ++b)
    for (std::size_t c = 0; c < x.channels; ++c)
      for (std::size_t y = 0; y < x.height; ++y) {
        const double* src = x.data.data() + ((b * x.channels + c) * x.height + y) * x.width;
        double s = 0.0;
        for (std::size_t i = 0; i < x.width; ++i) s += src[i];
        out(b, c * x.height + y) = s / static_cast<double>(x.width);
      }
  return out;
}

FeatureMap time_avg_pool_backward(const Tensor2& upstream, std::size_t channels, std::size_t height,
                                  std::size_t width) {
  if (upstream.cols != channels * height) throw std::invalid_argument("time_avg_pool_backward: shape mismatch");
  FeatureMap dx(upstream.rows, channels, height, width);
  for (std::size_t b = 0; b < upstream.rows; ++b)
    for (std::size_t c = 0; c < channels; ++c)
      for (std::size_t y = 0; y < height; ++y) {
        double* dst = dx.data.data() + ((b * channels + c) * height + y) * width;
        std::fill(dst, dst + width, upstream(b, c * height + y) / static_cast<double>(width));
      }
  return dx;
}

}  // namespace scenedistill
