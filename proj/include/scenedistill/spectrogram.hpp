#pragma once

#include <cstddef>
#include <vector>

namespace scenedistill {

/// F x T grid of log-mel energies, row-major by mel bin.
struct MelSpectrogram {
  std::size_t mel_bins = 0;
  std::size_t frames = 0;
  std::vector<double> values;

  MelSpectrogram() = default;
  MelSpectrogram(std::size_t f, std::size_t t, double fill = 0.0) : mel_bins(f), frames(t), values(f * t, fill) {}

  double& at(std::size_t f, std::size_t t) { return values[f * frames + t]; }
  double at(std::size_t f, std::size_t t) const { return values[f * frames + t]; }
  bool same_shape(const MelSpectrogram& o) const { return mel_bins == o.mel_bins && frames == o.frames; }

  bool operator==(const MelSpectrogram&) const = default;
};

}  // namespace scenedistill
