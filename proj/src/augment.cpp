#include "scenedistill/augment.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "scenedistill/losses.hpp"
#include "scenedistill/rng.hpp"

namespace scenedistill {

void AugmentConfig::validate(std::size_t mel_bins) const {
  auto prob = [](double p) { return p >= 0.0 && p <= 1.0; };
  if (!prob(p_fms) || !prob(p_mixup) || !prob(p_dir)) throw std::invalid_argument("augment: probabilities must be in [0, 1]");
  if (!(alpha_fms > 0.0) || !(alpha_mixup > 0.0)) throw std::invalid_argument("augment: alphas must be positive");
  if (max_mask_bins > mel_bins) throw std::invalid_argument("augment: max_mask_bins exceeds mel_bins");
  if (max_freq_shift_bins >= mel_bins) throw std::invalid_argument("augment: max_freq_shift_bins must be < mel_bins");
  if (!(dir_max_gain >= 0.0)) throw std::invalid_argument("augment: dir_max_gain must be >= 0");
}

std::pair<MelSpectrogram, std::vector<double>> mixup(const MelSpectrogram& x1, const MelSpectrogram& x2,
                                                     const std::vector<double>& y1, const std::vector<double>& y2,
                                                     double lam) {
  if (!x1.same_shape(x2) || y1.size() != y2.size()) throw std::invalid_argument("mixup: shape mismatch");
  if (!(lam >= 0.0 && lam <= 1.0)) throw std::invalid_argument("mixup: lambda must be in [0, 1]");
  MelSpectrogram x(x1.mel_bins, x1.frames);
  for (std::size_t i = 0; i < x.values.size(); ++i) x.values[i] = lam * x1.values[i] + (1.0 - lam) * x2.values[i];
  std::vector<double> y(y1.size());
  for (std::size_t c = 0; c < y.size(); ++c) y[c] = lam * y1[c] + (1.0 - lam) * y2[c];
  return {std::move(x), std::move(y)};
}

SpecBatch freq_mixstyle_apply(const SpecBatch& batch, double lam, const std::vector<std::size_t>& perm, double eps) {
  if (perm.size() != batch.size()) throw std::invalid_argument("freq_mixstyle: permutation size mismatch");
  if (lam == 1.0) return batch;
  const std::size_t b = batch.size();
  if (b == 0) return batch;
  const std::size_t f_n = batch[0].mel_bins, t_n = batch[0].frames;
  std::vector<double> mu(b * f_n), sigma(b * f_n);
  for (std::size_t i = 0; i < b; ++i) {
    if (batch[i].mel_bins != f_n || batch[i].frames != t_n) throw std::invalid_argument("freq_mixstyle: shape mismatch");
    for (std::size_t f = 0; f < f_n; ++f) {
      double m = 0.0;
      for (std::size_t t = 0; t < t_n; ++t) m += batch[i].at(f, t);
      m /= static_cast<double>(t_n);
      double v = 0.0;
      for (std::size_t t = 0; t < t_n; ++t) v += (batch[i].at(f, t) - m) * (batch[i].at(f, t) - m);
      mu[i * f_n + f] = m;
      sigma[i * f_n + f] = std::sqrt(v / static_cast<double>(t_n));
    }
  }
  SpecBatch out = batch;
  for (std::size_t i = 0; i < b; ++i) {
    const std::size_t j = perm[i];
    for (std::size_t f = 0; f < f_n; ++f) {
      const double mi = mu[i * f_n + f], si = sigma[i * f_n + f];
      const double mix_mu = lam * mi + (1.0 - lam) * mu[j * f_n + f];
      const double mix_sigma = lam * si + (1.0 - lam) * sigma[j * f_n + f];
      const double denom = std::max(si, eps);
      for (std::size_t t = 0; t < t_n; ++t) out[i].at(f, t) = (batch[i].at(f, t) - mi) / denom * mix_sigma + mix_mu;
    }
  }
  return out;
}

SpecBatch freq_mixstyle(const SpecBatch& batch, double alpha, double p, RngStream& rng) {
  if (batch.size() < 2) throw std::invalid_argument("freq_mixstyle: need B >= 2");
  if (!rng.bernoulli(p)) return batch;
  const double lam = rng.beta(alpha, alpha);
  return freq_mixstyle_apply(batch, lam, rng.permutation(batch.size()));
}

MelSpectrogram freq_mask_apply(const MelSpectrogram& x, std::size_t start, std::size_t width) {
  if (start + width > x.mel_bins) throw std::invalid_argument("freq_mask: band exceeds mel range");
  MelSpectrogram out = x;
  for (std::size_t f = start; f < start + width; ++f)
    for (std::size_t t = 0; t < x.frames; ++t) out.at(f, t) = 0.0;
  return out;
}

MelSpectrogram freq_mask(const MelSpectrogram& x, std::size_t max_bins, RngStream& rng) {
  if (max_bins > x.mel_bins) throw std::invalid_argument("freq_mask: max_bins exceeds mel_bins");
  const auto width = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(max_bins)));
  const auto start = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(x.mel_bins - width)));
  return freq_mask_apply(x, start, width);
}

MelSpectrogram time_roll_apply(const MelSpectrogram& x, std::ptrdiff_t shift) {
  const auto t_n = static_cast<std::ptrdiff_t>(x.frames);
  if (t_n == 0) return x;
  const std::ptrdiff_t s = ((shift % t_n) + t_n) % t_n;
  if (s == 0) return x;
  MelSpectrogram out(x.mel_bins, x.frames);
  for (std::size_t f = 0; f < x.mel_bins; ++f)
    for (std::ptrdiff_t t = 0; t < t_n; ++t)
      out.at(f, static_cast<std::size_t>((t + s) % t_n)) = x.at(f, static_cast<std::size_t>(t));
  return out;
}

MelSpectrogram time_roll(const MelSpectrogram& x, std::size_t max_frames, RngStream& rng) {
  const auto m = static_cast<std::int64_t>(max_frames);
  return time_roll_apply(x, static_cast<std::ptrdiff_t>(rng.uniform_int(-m, m)));
}

std::vector<double> random_device_response(std::size_t mel_bins, double max_gain, RngStream& rng) {
  std::vector<double> g(mel_bins, 0.0);
  const auto components = rng.uniform_int(1, 3);
  const double span = mel_bins > 1 ? static_cast<double>(mel_bins - 1) : 1.0;
  for (std::int64_t c = 0; c < components; ++c) {
    const auto order = static_cast<double>(rng.uniform_int(0, 3));
    const double amp = rng.uniform(-max_gain / 3.0, max_gain / 3.0);
    const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
    for (std::size_t f = 0; f < mel_bins; ++f)
      g[f] += amp * std::cos(std::numbers::pi * order * static_cast<double>(f) / span + phase);
  }
  return g;
}

MelSpectrogram dir_apply(const MelSpectrogram& x, const std::vector<double>& response) {
  if (response.size() != x.mel_bins) throw std::invalid_argument("dir_apply: response length mismatch");
  MelSpectrogram out = x;
  for (std::size_t f = 0; f < x.mel_bins; ++f) {
    if (response[f] == 0.0) continue;
    for (std::size_t t = 0; t < x.frames; ++t) out.at(f, t) += response[f];
  }
  return out;
}

MelSpectrogram dir_augment(const MelSpectrogram& x, double p, double max_gain, RngStream& rng) {
  if (!rng.bernoulli(p)) return x;
  return dir_apply(x, random_device_response(x.mel_bins, max_gain, rng));
}

MelSpectrogram freq_shift_apply(const MelSpectrogram& x, std::ptrdiff_t k) {
  if (k == 0) return x;
  MelSpectrogram out(x.mel_bins, x.frames, 0.0);
  const auto f_n = static_cast<std::ptrdiff_t>(x.mel_bins);
  for (std::ptrdiff_t f = 0; f < f_n; ++f) {
    const std::ptrdiff_t src = f - k;
    if (src < 0 || src >= f_n) continue;
    std::copy_n(x.values.begin() + src * static_cast<std::ptrdiff_t>(x.frames), x.frames,
                out.values.begin() + f * static_cast<std::ptrdiff_t>(x.frames));
  }
  return out;
}

MelSpectrogram freq_shift(const MelSpectrogram& x, std::size_t max_shift_bins, RngStream& rng) {
  if (max_shift_bins >= x.mel_bins && x.mel_bins > 0)
    throw std::invalid_argument("freq_shift: max_shift_bins must be < mel_bins");
  const auto m = static_cast<std::int64_t>(max_shift_bins);
  return freq_shift_apply(x, static_cast<std::ptrdiff_t>(rng.uniform_int(-m, m)));
}

AugmentedBatch stage_pipeline(const SpecBatch& batch, const Tensor2& labels, AugmentStage stage,
                              const AugmentConfig& cfg, RngStream& rng) {
  if (labels.rows != batch.size()) throw std::invalid_argument("stage_pipeline: label count mismatch");
  AugmentedBatch out{batch, labels, std::nullopt};
  if (batch.size() >= 2) out.batch = freq_mixstyle(out.batch, cfg.alpha_fms, cfg.p_fms, rng);

  const std::size_t b = batch.size();
  if (stage == AugmentStage::finetune && b >= 2) {
    const SpecBatch styled = out.batch;
    for (std::size_t i = 0; i < b; ++i) {
      if (!rng.bernoulli(cfg.p_mixup)) continue;
      auto j = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(b) - 2));
      if (j >= i) ++j;  // partner is any other sample
      const double lam = rng.beta(cfg.alpha_mixup, cfg.alpha_mixup);
      const std::vector<double> yi(labels.row(i).begin(), labels.row(i).end());
      const std::vector<double> yj(labels.row(j).begin(), labels.row(j).end());
      auto [x, y] = mixup(styled[i], styled[j], yi, yj, lam);
      out.batch[i] = std::move(x);
      std::copy(y.begin(), y.end(), out.labels.row(i).begin());
    }
  }

  for (auto& x : out.batch) {
    if (stage == AugmentStage::distill) {
      x = dir_augment(x, cfg.p_dir, cfg.dir_max_gain, rng);
      x = freq_shift(x, cfg.max_freq_shift_bins, rng);
    }
    x = time_roll(x, cfg.max_roll_frames, rng);
    x = freq_mask(x, cfg.max_mask_bins, rng);
  }
  if (stage == AugmentStage::finetune) out.weights = similarity_weights(out.labels);
  return out;
}

}  // namespace scenedistill
