#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <set>

#include "scenedistill/data.hpp"
#include "scenedistill/io.hpp"
#include "scenedistill/rng.hpp"

using namespace scenedistill;
namespace fs = std::filesystem;

namespace {

GeneratorConfig small_config() {
  GeneratorConfig g = default_generator_config(32, 24, 6, 3);
  g.train_per_class = 12;
  g.val_per_class = 4;
  for (auto& t : g.transfer_sets) {
    t.pool_per_class = 5;
    t.test_per_class = 6;
  }
  return g;
}

fs::path temp_dir(const std::string& name) {
  auto d = fs::temp_directory_path() / ("scenedistill_data_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

}  // namespace

TEST(Generator, DefaultUniverseLayout) {
  const auto g = default_generator_config(64, 64, 8, 4);
  ASSERT_EQ(g.scenes.size(), 12u);
  EXPECT_EQ(g.train_scenes.size(), 8u);
  ASSERT_EQ(g.transfer_sets.size(), 2u);
  for (const auto& s : g.scenes) {
    EXPECT_GE(s.band_center, 0.0);
    EXPECT_LT(s.band_center, 64.0);
  }
  std::set<double> centers;
  for (const auto& s : g.scenes) centers.insert(s.band_center);
  EXPECT_EQ(centers.size(), 12u);
  EXPECT_NO_THROW(g.validate());
}

TEST(Generator, SplitsAreDisjointAndSized) {
  const auto g = small_config();
  const auto ds = generate_datasets(g, RngStream(3, 0));
  ASSERT_EQ(ds.size(), 3u);
  EXPECT_EQ(ds[0].split("train").size(), 12u * 6);
  EXPECT_EQ(ds[0].split("val").size(), 4u * 6);
  std::set<std::uint64_t> ids;
  std::size_t total = 0;
  for (const auto& d : ds)
    for (const auto& [name, samples] : d.splits) {
      total += samples.size();
      for (const auto& s : samples) ids.insert(s.id);
    }
  EXPECT_EQ(ids.size(), total);
  for (const auto& d : ds)
    for (const auto& s : d.manifest.splits) EXPECT_EQ(d.split(s.name).size(), s.count);
}

TEST(Generator, UnseenClassesOnlyInTransferSets) {
  const auto ds = generate_datasets(small_config(), RngStream(3, 0));
  for (bool s : ds[0].manifest.seen) EXPECT_TRUE(s);
  std::set<std::size_t> train_scenes(ds[0].manifest.scene_ids.begin(), ds[0].manifest.scene_ids.end());
  for (std::size_t t = 1; t < ds.size(); ++t) {
    const auto& m = ds[t].manifest;
    std::size_t unseen = 0;
    for (std::size_t c = 0; c < m.class_names.size(); ++c) {
      EXPECT_EQ(m.seen[c], train_scenes.count(m.scene_ids[c]) == 1);
      unseen += !m.seen[c];
    }
    EXPECT_EQ(unseen, 3u);
    EXPECT_GT(m.class_names.size(), unseen);
  }
}

TEST(Generator, ValuesWithinLogMelRangeAndFloatExact) {
  auto g = small_config();
  g.noise_std = 40.0;
  const auto ds = generate_datasets(g, RngStream(4, 0));
  for (const auto& d : ds)
    for (const auto& [name, samples] : d.splits)
      for (const auto& s : samples)
        for (double v : s.spec.values) {
          EXPECT_GE(v, kLogMelMin);
          EXPECT_LE(v, kLogMelMax);
          EXPECT_EQ(v, static_cast<double>(static_cast<float>(v)));
        }
}

TEST(Generator, DeterministicPerSeed) {
  const auto a = generate_datasets(small_config(), RngStream(9, 0));
  const auto b = generate_datasets(small_config(), RngStream(9, 0));
  const auto c = generate_datasets(small_config(), RngStream(10, 0));
  EXPECT_EQ(a, b);
  EXPECT_NE(a[0].split("train")[0].spec, c[0].split("train")[0].spec);
}

TEST(Generator, BandEnergyIsLinearlyDecodable) {
  auto g = default_generator_config(32, 32, 8, 4);
  g.train_per_class = 30;
  g.val_per_class = 30;
  g.transfer_sets.clear();
  const auto ds = generate_datasets(g, RngStream(11, 0)).front();
  // Nearest centroid on the time-averaged band profile.
  auto profile = [](const MelSpectrogram& x) {
    std::vector<double> p(x.mel_bins, 0.0);
    for (std::size_t f = 0; f < x.mel_bins; ++f)
      for (std::size_t t = 0; t < x.frames; ++t) p[f] += x.at(f, t) / static_cast<double>(x.frames);
    return p;
  };
  const std::size_t C = ds.num_classes();
  std::vector<std::vector<double>> centroid(C, std::vector<double>(32, 0.0));
  std::vector<double> n(C, 0.0);
  for (const auto& s : ds.split("train")) {
    const auto p = profile(s.spec);
    for (std::size_t f = 0; f < 32; ++f) centroid[s.class_id][f] += p[f];
    n[s.class_id] += 1.0;
  }
  for (std::size_t c = 0; c < C; ++c)
    for (double& v : centroid[c]) v /= n[c];
  std::size_t correct = 0;
  for (const auto& s : ds.split("val")) {
    const auto p = profile(s.spec);
    std::size_t best = 0;
    double best_d = 1e300;
    for (std::size_t c = 0; c < C; ++c) {
      double d = 0.0;
      for (std::size_t f = 0; f < 32; ++f) d += (p[f] - centroid[c][f]) * (p[f] - centroid[c][f]);
      if (d < best_d) best_d = d, best = c;
    }
    correct += best == s.class_id;
  }
  EXPECT_GT(static_cast<double>(correct) / static_cast<double>(ds.split("val").size()), 0.95);
}

TEST(Generator, NoiseOffRemovesTiltAndAdditiveNoise) {
  auto g = default_generator_config(16, 16, 2, 0);
  const auto& scene = g.scenes[0];
  const auto clean = render_scene(scene, g, 77, false);
  g.noise_std = 0.0;
  g.tilt_max = 0.0;
  EXPECT_EQ(render_scene(scene, g, 77, true), clean);
  g.texture_std = 0.0;
  // Without texture every sample is the deterministic modulated band, up to phase.
  const auto a = render_scene(scene, g, 1, false);
  double mean_a = 0.0, mean_bg = 0.0;
  const auto far = static_cast<std::size_t>(scene.band_center) + 8 < 16 ? 15 : 0;
  for (std::size_t t = 0; t < 16; ++t) {
    mean_a += a.at(static_cast<std::size_t>(std::lround(scene.band_center)), t) / 16.0;
    mean_bg += a.at(far, t) / 16.0;
  }
  EXPECT_GT(mean_a, mean_bg + 5.0);
}

TEST(Serialization, RoundTrip) {
  const auto ds = generate_datasets(small_config(), RngStream(5, 0));
  const auto dir = temp_dir("roundtrip");
  for (const auto& d : ds) save_dataset(dir, d);
  for (const auto& d : ds) EXPECT_EQ(load_dataset(manifest_path(dir, d.manifest.name)), d);
}

TEST(Serialization, HeaderLayout) {
  const auto ds = generate_datasets(small_config(), RngStream(5, 0)).front();
  const auto bytes = encode_split(ds.split("val"), 32, 24);
  EXPECT_EQ(bytes.substr(0, 4), "ASCD");
  EXPECT_EQ(bytes.size(), 20u + ds.split("val").size() * (2 + 4 * 32 * 24));
}

class CorruptSplit : public ::testing::Test {
 protected:
  void SetUp() override {
    ds_ = generate_datasets(small_config(), RngStream(6, 0)).front();
    bytes_ = encode_split(ds_.split("val"), 32, 24);
    info_ = ds_.manifest.splits[1];
    ASSERT_EQ(info_.name, "val");
  }
  DatasetError::Kind kind_of(const std::string& bytes, const SplitInfo& info) {
    try {
      decode_split(bytes, ds_.manifest, info);
    } catch (const DatasetError& e) {
      return e.kind();
    }
    ADD_FAILURE() << "decode_split accepted corrupt input";
    return DatasetError::Kind::invalid_manifest;
  }
  Dataset ds_;
  std::string bytes_;
  SplitInfo info_;
};

TEST_F(CorruptSplit, Truncated) {
  EXPECT_EQ(kind_of(bytes_.substr(0, bytes_.size() - 3), info_), DatasetError::Kind::truncated_payload);
}

TEST_F(CorruptSplit, CountMismatch) {
  auto info = info_;
  info.count += 1;
  EXPECT_EQ(kind_of(bytes_, info), DatasetError::Kind::count_mismatch);
  EXPECT_EQ(kind_of(bytes_ + std::string(2 + 4 * 32 * 24, '\0'), info_), DatasetError::Kind::count_mismatch);
}

TEST_F(CorruptSplit, BadHeader) {
  auto bad = bytes_;
  bad[0] = 'X';
  EXPECT_EQ(kind_of(bad, info_), DatasetError::Kind::corrupt_header);
  EXPECT_EQ(kind_of(bytes_.substr(0, 10), info_), DatasetError::Kind::corrupt_header);
  auto version = bytes_;
  version[4] = 9;
  EXPECT_EQ(kind_of(version, info_), DatasetError::Kind::corrupt_header);
}

TEST_F(CorruptSplit, ClassIdOutOfRange) {
  auto bad = bytes_;
  bad[20] = 100;
  EXPECT_EQ(kind_of(bad, info_), DatasetError::Kind::invalid_manifest);
}

TEST(Serialization, MissingFilesAndBadManifest) {
  const auto dir = temp_dir("missing");
  EXPECT_THROW(load_dataset(dir / "nope.json"), MissingInputError);
  write_file_atomic(dir / "bad.json", "{\"name\": 3}");
  try {
    load_dataset(dir / "bad.json");
    FAIL();
  } catch (const DatasetError& e) {
    EXPECT_EQ(e.kind(), DatasetError::Kind::invalid_manifest);
  }
}
