#pragma once

#include <cstddef>
#include <optional>
#include <utility>
#include <vector>

#include "scenedistill/spectrogram.hpp"
#include "scenedistill/tensor.hpp"

namespace scenedistill {

class RngStream;

struct AugmentConfig {
  double p_fms = 0.4;
  double alpha_fms = 0.4;
  double p_mixup = 0.3;
  double alpha_mixup = 2.0;
  /// 0.1 s at a 16 ms hop.
  std::size_t max_roll_frames = 6;
  std::size_t max_mask_bins = 48;
  double p_dir = 0.6;
  std::size_t max_freq_shift_bins = 2;
  /// Peak magnitude of a simulated device response, log-mel units.
  double dir_max_gain = 6.0;

  void validate(std::size_t mel_bins) const;
};

enum class AugmentStage { finetune, distill };

using SpecBatch = std::vector<MelSpectrogram>;

/// Convex combination of two samples and their soft labels.
std::pair<MelSpectrogram, std::vector<double>> mixup(const MelSpectrogram& x1, const MelSpectrogram& x2,
                                                     const std::vector<double>& y1, const std::vector<double>& y2,
                                                     double lam);

inline constexpr double kMixStyleEps = 1e-6;

/// Freq-MixStyle with an explicit mixing weight and partner permutation.
/// Per sample and mel bin, statistics are taken over time and the sample is
/// re-styled with lam * own + (1 - lam) * partner statistics. lam == 1 is
/// the identity.
SpecBatch freq_mixstyle_apply(const SpecBatch& batch, double lam, const std::vector<std::size_t>& perm,
                              double eps = kMixStyleEps);
/// One draw per batch: with probability p, lam ~ Beta(alpha, alpha) and a
/// random permutation; otherwise the input is returned unchanged.
SpecBatch freq_mixstyle(const SpecBatch& batch, double alpha, double p, RngStream& rng);

/// Zero a band of `width` bins starting at `start`.
MelSpectrogram freq_mask_apply(const MelSpectrogram& x, std::size_t start, std::size_t width);
/// width ~ U{0..max_bins}, start ~ U{0..F-width}.
MelSpectrogram freq_mask(const MelSpectrogram& x, std::size_t max_bins, RngStream& rng);

/// Circular shift along time: out[f][t] = x[f][(t - shift) mod T].
MelSpectrogram time_roll_apply(const MelSpectrogram& x, std::ptrdiff_t shift);
MelSpectrogram time_roll(const MelSpectrogram& x, std::size_t max_frames, RngStream& rng);

/// Smooth random per-bin response: a sum of 1..3 low-order cosines whose
/// magnitudes add up to at most `max_gain`.
std::vector<double> random_device_response(std::size_t mel_bins, double max_gain, RngStream& rng);
/// out[f][t] = x[f][t] + response[f]
MelSpectrogram dir_apply(const MelSpectrogram& x, const std::vector<double>& response);
MelSpectrogram dir_augment(const MelSpectrogram& x, double p, double max_gain, RngStream& rng);

/// Shift along frequency: out[f] = x[f - k]; vacated bins are 0.
MelSpectrogram freq_shift_apply(const MelSpectrogram& x, std::ptrdiff_t k);
MelSpectrogram freq_shift(const MelSpectrogram& x, std::size_t max_shift_bins, RngStream& rng);

struct AugmentedBatch {
  SpecBatch batch;
  Tensor2 labels;                  // soft labels, B x C
  std::optional<Tensor2> weights;  // similarity weights (finetune stage only)
};

/// finetune: FMS -> mixup -> time roll -> freq mask, emits similarity weights.
/// distill:  FMS -> DIR -> freq shift -> time roll -> freq mask, labels untouched.
AugmentedBatch stage_pipeline(const SpecBatch& batch, const Tensor2& labels, AugmentStage stage,
                              const AugmentConfig& cfg, RngStream& rng);

}  // namespace scenedistill
