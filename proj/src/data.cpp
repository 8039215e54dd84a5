#include "scenedistill/data.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <set>

#include <nlohmann/json.hpp>

#include "scenedistill/bytes.hpp"
#include "scenedistill/io.hpp"
#include "scenedistill/rng.hpp"

namespace scenedistill {

void GeneratorConfig::validate() const {
  if (mel_bins < 1 || frames < 1) throw std::invalid_argument("data: mel_bins and frames must be >= 1");
  if (scenes.size() < 2) throw std::invalid_argument("data: need at least 2 scenes");
  if (train_scenes.size() < 2) throw std::invalid_argument("data: training set needs at least 2 classes");
  if (train_per_class < 1) throw std::invalid_argument("data: train_per_class must be >= 1");
  if (scenes.size() > 65535) throw std::invalid_argument("data: too many scenes for u16 class ids");
  for (const auto& s : scenes) {
    if (!(s.band_center >= 0.0 && s.band_center < static_cast<double>(mel_bins)))
      throw std::invalid_argument("data: scene '" + s.name + "' band center outside [0, mel_bins)");
    if (!(s.band_width >= 1.0)) throw std::invalid_argument("data: scene '" + s.name + "' band width must be >= 1");
  }
  std::set<std::size_t> seen(train_scenes.begin(), train_scenes.end());
  if (seen.size() != train_scenes.size()) throw std::invalid_argument("data: duplicate training scene");
  for (auto i : train_scenes)
    if (i >= scenes.size()) throw std::invalid_argument("data: training scene index out of range");
  std::set<std::string> names{train_name};
  for (const auto& t : transfer_sets) {
    if (!names.insert(t.name).second) throw std::invalid_argument("data: duplicate dataset name '" + t.name + "'");
    if (t.scenes.size() < 2) throw std::invalid_argument("data: transfer set '" + t.name + "' needs >= 2 classes");
    if (t.pool_per_class < 1 || t.test_per_class < 1)
      throw std::invalid_argument("data: transfer set '" + t.name + "' needs >= 1 sample per class and split");
    for (auto i : t.scenes)
      if (i >= scenes.size()) throw std::invalid_argument("data: transfer scene index out of range");
  }
}

GeneratorConfig default_generator_config(std::size_t mel_bins, std::size_t frames, std::size_t seen,
                                         std::size_t unseen) {
  GeneratorConfig cfg;
  cfg.mel_bins = mel_bins;
  cfg.frames = frames;
  const std::size_t total = seen + unseen;
  // Unseen scenes are interleaved between seen ones along the mel axis and
  // use their own modulation rates, so they are novel but not isolated.
  const double margin = 0.1 * static_cast<double>(mel_bins);
  const double span = static_cast<double>(mel_bins) - 2.0 * margin;
  std::vector<std::size_t> unseen_slots;
  for (std::size_t u = 0; u < unseen; ++u) unseen_slots.push_back((2 * u + 1) * total / (2 * unseen));
  std::size_t next_seen = 0, next_unseen = 0;
  std::vector<SceneSpec> seen_specs, unseen_specs;
  for (std::size_t slot = 0; slot < total; ++slot) {
    SceneSpec s;
    const bool is_unseen = std::find(unseen_slots.begin(), unseen_slots.end(), slot) != unseen_slots.end() &&
                           next_unseen < unseen;
    s.band_center = margin + span * (static_cast<double>(slot) + 0.5) / static_cast<double>(total);
    s.band_width = std::max(1.0, 0.05 * static_cast<double>(mel_bins));
    s.temporal_mod_rate = 0.02 + 0.03 * static_cast<double>(slot % 4);
    s.snr = 20.0;
    if (is_unseen) {
      s.name = "unseen_" + std::to_string(next_unseen++);
      unseen_specs.push_back(s);
    } else {
      s.name = "scene_" + std::to_string(next_seen++);
      seen_specs.push_back(s);
    }
  }
  for (auto& s : seen_specs) cfg.scenes.push_back(s);
  for (auto& s : unseen_specs) cfg.scenes.push_back(s);
  for (std::size_t i = 0; i < cfg.scenes.size(); ++i) cfg.scenes[i].texture_seed = 1000 + i;
  for (std::size_t i = 0; i < seen; ++i) cfg.train_scenes.push_back(i);

  // Two transfer sets, each with half of the seen scenes plus every unseen one.
  for (std::size_t t = 0; t < 2; ++t) {
    TransferSetSpec ts;
    ts.name = t == 0 ? "transfer_a" : "transfer_b";
    for (std::size_t i = t; i < seen; i += 2) ts.scenes.push_back(i);
    for (std::size_t u = 0; u < unseen; ++u) ts.scenes.push_back(seen + u);
    cfg.transfer_sets.push_back(ts);
  }
  return cfg;
}

const std::vector<Sample>& Dataset::split(const std::string& name) const {
  auto it = splits.find(name);
  if (it == splits.end()) throw std::out_of_range("dataset '" + manifest.name + "' has no split '" + name + "'");
  return it->second;
}

MelSpectrogram render_scene(const SceneSpec& scene, const GeneratorConfig& cfg, std::uint64_t sample_seed,
                            bool noise) {
  RngStream rng(sample_seed, scene.texture_seed);
  RngStream texture = rng.derive("texture");
  RngStream noise_rng = rng.derive("noise");
  const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double tilt = noise ? rng.uniform(-cfg.tilt_max, cfg.tilt_max) : 0.0;
  MelSpectrogram x(cfg.mel_bins, cfg.frames);
  const double f_span = cfg.mel_bins > 1 ? static_cast<double>(cfg.mel_bins - 1) : 1.0;
  for (std::size_t f = 0; f < cfg.mel_bins; ++f) {
    const double z = (static_cast<double>(f) - scene.band_center) / scene.band_width;
    const double profile = std::exp(-0.5 * z * z);
    const double tilt_db = tilt * (static_cast<double>(f) / f_span - 0.5);
    for (std::size_t t = 0; t < cfg.frames; ++t) {
      const double mod =
          0.5 + 0.5 * std::sin(2.0 * std::numbers::pi * scene.temporal_mod_rate * static_cast<double>(t) + phase);
      double v = cfg.background + scene.snr * profile * mod + profile * cfg.texture_std * texture.normal() + tilt_db;
      if (noise) v += cfg.noise_std * noise_rng.normal();
      v = std::clamp(v, kLogMelMin, kLogMelMax);
      x.at(f, t) = static_cast<double>(static_cast<float>(v));
    }
  }
  return x;
}

namespace {

std::vector<Sample> render_split(const GeneratorConfig& cfg, const std::vector<std::size_t>& scenes,
                                 std::size_t per_class, const RngStream& rng, std::uint64_t& next_id) {
  std::vector<Sample> out;
  out.reserve(per_class * scenes.size());
  for (std::size_t i = 0; i < per_class * scenes.size(); ++i) {
    const std::size_t local = i % scenes.size();
    Sample s;
    s.id = next_id++;
    s.class_id = static_cast<std::uint16_t>(local);
    s.spec = render_scene(cfg.scenes[scenes[local]], cfg, rng.derive(i).next_u64());
    out.push_back(std::move(s));
  }
  return out;
}

Dataset make_dataset(const GeneratorConfig& cfg, const std::string& name, const std::vector<std::size_t>& scenes,
                     const std::vector<std::pair<std::string, std::size_t>>& splits, const RngStream& rng,
                     std::uint64_t& next_id) {
  Dataset ds;
  auto& m = ds.manifest;
  m.name = name;
  m.mel_bins = cfg.mel_bins;
  m.frames = cfg.frames;
  for (auto idx : scenes) {
    m.class_names.push_back(cfg.scenes[idx].name);
    m.scene_ids.push_back(idx);
    m.seen.push_back(std::find(cfg.train_scenes.begin(), cfg.train_scenes.end(), idx) != cfg.train_scenes.end());
  }
  const RngStream ds_rng = rng.derive(name);
  for (const auto& [split, per_class] : splits) {
    SplitInfo info{split, per_class * scenes.size(), next_id};
    ds.splits[split] = render_split(cfg, scenes, per_class, ds_rng.derive(split), next_id);
    m.splits.push_back(info);
  }
  return ds;
}

}  // namespace

std::vector<Dataset> generate_datasets(const GeneratorConfig& cfg, const RngStream& rng) {
  cfg.validate();
  std::uint64_t next_id = 0;
  std::vector<Dataset> out;
  out.push_back(make_dataset(cfg, cfg.train_name, cfg.train_scenes,
                             {{"train", cfg.train_per_class}, {"val", cfg.val_per_class}}, rng, next_id));
  for (const auto& t : cfg.transfer_sets)
    out.push_back(make_dataset(cfg, t.name, t.scenes, {{"pool", t.pool_per_class}, {"test", t.test_per_class}}, rng,
                               next_id));
  return out;
}

// --- serialization ---------------------------------------------------------------

std::string encode_split(const std::vector<Sample>& samples, std::size_t mel_bins, std::size_t frames) {
  ByteWriter w;
  w.raw("ASCD");
  w.u32(kDatasetVersion);
  w.u32(static_cast<std::uint32_t>(samples.size()));
  w.u32(static_cast<std::uint32_t>(mel_bins));
  w.u32(static_cast<std::uint32_t>(frames));
  for (const auto& s : samples) {
    if (s.spec.mel_bins != mel_bins || s.spec.frames != frames)
      throw std::invalid_argument("encode_split: sample shape mismatch");
    w.u16(s.class_id);
    for (double v : s.spec.values) w.f32(static_cast<float>(v));
  }
  return std::move(w.str());
}

std::vector<Sample> decode_split(std::string_view bytes, const DatasetManifest& manifest, const SplitInfo& split) {
  using Kind = DatasetError::Kind;
  ByteReader r(bytes);
  std::uint32_t n = 0, f = 0, t = 0;
  try {
    if (r.raw(4) != "ASCD") throw DatasetError(Kind::corrupt_header, "corrupt header: bad magic");
    if (const auto v = r.u32(); v != kDatasetVersion)
      throw DatasetError(Kind::corrupt_header, "corrupt header: unsupported version " + std::to_string(v));
    n = r.u32();
    f = r.u32();
    t = r.u32();
  } catch (const TruncatedError&) {
    throw DatasetError(Kind::corrupt_header, "corrupt header: file shorter than header");
  }
  if (f != manifest.mel_bins || t != manifest.frames)
    throw DatasetError(Kind::corrupt_header, "corrupt header: shape does not match manifest");
  if (n != split.count)
    throw DatasetError(Kind::count_mismatch, "manifest/payload count mismatch in split '" + split.name +
                                                 "': manifest " + std::to_string(split.count) + ", payload " +
                                                 std::to_string(n));
  const std::size_t record = 2 + 4 * static_cast<std::size_t>(f) * t;
  if (r.remaining() < record * n) throw DatasetError(Kind::truncated_payload, "truncated payload in split '" + split.name + "'");
  if (r.remaining() > record * n)
    throw DatasetError(Kind::count_mismatch, "manifest/payload count mismatch in split '" + split.name +
                                                 "': trailing records");
  std::vector<Sample> out(n);
  for (std::uint32_t i = 0; i < n; ++i) {
    out[i].id = split.first_id + i;
    out[i].class_id = r.u16();
    if (out[i].class_id >= manifest.class_names.size())
      throw DatasetError(Kind::invalid_manifest, "sample class id not in manifest");
    out[i].spec = MelSpectrogram(f, t);
    for (double& v : out[i].spec.values) v = static_cast<double>(r.f32());
  }
  return out;
}

std::filesystem::path manifest_path(const std::filesystem::path& dir, const std::string& name) {
  return dir / (name + ".manifest.json");
}

std::filesystem::path split_path(const std::filesystem::path& dir, const std::string& name, const std::string& split) {
  return dir / (name + "." + split + ".ascd");
}

void save_dataset(const std::filesystem::path& dir, const Dataset& ds) {
  const auto& m = ds.manifest;
  nlohmann::ordered_json j;
  j["name"] = m.name;
  j["mel_bins"] = m.mel_bins;
  j["frames"] = m.frames;
  j["class_names"] = m.class_names;
  j["scene_ids"] = m.scene_ids;
  j["seen"] = m.seen;
  j["splits"] = nlohmann::ordered_json::array();
  for (const auto& s : m.splits)
    j["splits"].push_back({{"name", s.name}, {"count", s.count}, {"first_id", s.first_id},
                           {"file", split_path("", m.name, s.name).string()}});
  for (const auto& s : m.splits) write_file_atomic(split_path(dir, m.name, s.name), encode_split(ds.split(s.name), m.mel_bins, m.frames));
  write_file_atomic(manifest_path(dir, m.name), j.dump(2) + "\n");
}

Dataset load_dataset(const std::filesystem::path& manifest_file) {
  using Kind = DatasetError::Kind;
  Dataset ds;
  auto& m = ds.manifest;
  try {
    const auto j = nlohmann::json::parse(read_file(manifest_file));
    m.name = j.at("name").get<std::string>();
    m.mel_bins = j.at("mel_bins").get<std::size_t>();
    m.frames = j.at("frames").get<std::size_t>();
    m.class_names = j.at("class_names").get<std::vector<std::string>>();
    m.scene_ids = j.at("scene_ids").get<std::vector<std::size_t>>();
    m.seen = j.at("seen").get<std::vector<bool>>();
    for (const auto& s : j.at("splits"))
      m.splits.push_back({s.at("name").get<std::string>(), s.at("count").get<std::size_t>(),
                          s.at("first_id").get<std::uint64_t>()});
  } catch (const nlohmann::json::exception& e) {
    throw DatasetError(Kind::invalid_manifest, std::string("invalid manifest: ") + e.what());
  }
  if (m.scene_ids.size() != m.class_names.size() || m.seen.size() != m.class_names.size())
    throw DatasetError(Kind::invalid_manifest, "invalid manifest: per-class arrays differ in length");
  const auto dir = manifest_file.parent_path();
  for (const auto& s : m.splits) ds.splits[s.name] = decode_split(read_file(split_path(dir, m.name, s.name)), m, s);
  return ds;
}

}  // namespace scenedistill
