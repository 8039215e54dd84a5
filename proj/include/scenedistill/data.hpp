#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "scenedistill/spectrogram.hpp"

namespace scenedistill {

class RngStream;

/// One synthetic scene class: a band-limited, temporally modulated pattern.
struct SceneSpec {
  std::string name;
  double band_center = 0.0;        // mel bin
  double band_width = 1.0;         // bins (Gaussian sigma)
  double temporal_mod_rate = 0.0;  // cycles per frame
  std::uint64_t texture_seed = 0;
  double snr = 20.0;               // band peak above background, log-mel units
};

struct TransferSetSpec {
  std::string name;
  std::vector<std::size_t> scenes;  // indices into GeneratorConfig::scenes
  std::size_t pool_per_class = 20;
  std::size_t test_per_class = 30;
};

struct GeneratorConfig {
  std::size_t mel_bins = 64;
  std::size_t frames = 64;
  std::vector<SceneSpec> scenes;
  std::string train_name = "scenes";
  std::vector<std::size_t> train_scenes;  // the seen classes
  std::size_t train_per_class = 60;
  std::size_t val_per_class = 20;
  std::vector<TransferSetSpec> transfer_sets;
  double background = -30.0;
  double noise_std = 3.0;
  double texture_std = 2.0;
  double tilt_max = 6.0;

  void validate() const;
};

/// Default universe: evenly placed overlapping bands; the first
/// `seen` scenes form the training set and the transfer sets mix seen and
/// unseen scenes.
GeneratorConfig default_generator_config(std::size_t mel_bins = 64, std::size_t frames = 64, std::size_t seen = 8,
                                         std::size_t unseen = 4);

inline constexpr double kLogMelMin = -80.0;
inline constexpr double kLogMelMax = 10.0;

struct Sample {
  std::uint64_t id = 0;
  std::uint16_t class_id = 0;
  MelSpectrogram spec;

  bool operator==(const Sample&) const = default;
};

struct SplitInfo {
  std::string name;
  std::size_t count = 0;
  std::uint64_t first_id = 0;

  bool operator==(const SplitInfo&) const = default;
};

struct DatasetManifest {
  std::string name;
  std::size_t mel_bins = 0;
  std::size_t frames = 0;
  std::vector<std::string> class_names;
  std::vector<std::size_t> scene_ids;  // universe index per class
  std::vector<bool> seen;              // class appears in the training set
  std::vector<SplitInfo> splits;

  bool operator==(const DatasetManifest&) const = default;
};

struct Dataset {
  DatasetManifest manifest;
  std::map<std::string, std::vector<Sample>> splits;

  const std::vector<Sample>& split(const std::string& name) const;
  std::size_t num_classes() const { return manifest.class_names.size(); }
  bool operator==(const Dataset&) const = default;
};

/// Renders one sample. `sample_seed` controls every per-sample draw
/// (texture, phase, noise, tilt).
MelSpectrogram render_scene(const SceneSpec& scene, const GeneratorConfig& cfg, std::uint64_t sample_seed,
                            bool noise = true);

/// Training dataset (train/val over seen scenes) followed by each transfer
/// set (pool/test). Deterministic in (cfg, rng seed).
std::vector<Dataset> generate_datasets(const GeneratorConfig& cfg, const RngStream& rng);

class DatasetError : public std::runtime_error {
 public:
  enum class Kind { corrupt_header, truncated_payload, count_mismatch, invalid_manifest };
  DatasetError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

inline constexpr std::uint32_t kDatasetVersion = 1;

/// ASCD split payload: "ASCD" u32 version, u32 n, u32 F, u32 T, then
/// n x (u16 class_id, F*T f32), all little-endian.
std::string encode_split(const std::vector<Sample>& samples, std::size_t mel_bins, std::size_t frames);
std::vector<Sample> decode_split(std::string_view bytes, const DatasetManifest& manifest, const SplitInfo& split);

std::filesystem::path manifest_path(const std::filesystem::path& dir, const std::string& name);
std::filesystem::path split_path(const std::filesystem::path& dir, const std::string& name, const std::string& split);

/// Writes `<name>.manifest.json` and one `<name>.<split>.ascd` per split.
void save_dataset(const std::filesystem::path& dir, const Dataset& ds);
Dataset load_dataset(const std::filesystem::path& manifest_file);

}  // namespace scenedistill
