#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "scenedistill/checkpoint.hpp"
#include "scenedistill/grad_check.hpp"
#include "scenedistill/io.hpp"
#include "scenedistill/layers.hpp"
#include "scenedistill/model.hpp"
#include "scenedistill/optim.hpp"
#include "test_util.hpp"

using namespace scenedistill;
namespace fs = std::filesystem;

namespace {

double weighted_sum(const Tensor2& t, const Tensor2& w) {
  double s = 0.0;
  for (std::size_t i = 0; i < t.size(); ++i) s += t.data[i] * w.data[i];
  return s;
}

ModelConfig tiny_config(EncoderVariant v, EmbeddingNorm n, Pooling pooling = Pooling::global) {
  ModelConfig c;
  c.encoder = {v, 8, 8, 6, 1, n, -40.0, 0.05, pooling};
  c.head = {3, 6, 56.0};
  c.projection = {6, 6, 4};
  return c;
}

}  // namespace

TEST(CosineHead, MatchingWeightGivesGamma) {
  Tensor2 x(1, 3, std::vector<double>{0.3, -1.2, 2.0});
  Tensor2 w(2, 3, std::vector<double>{0.3, -1.2, 2.0, 1.2, 0.3, 0.0});
  auto logits = cosine_head_forward(x, w, 56.0);
  EXPECT_NEAR(logits(0, 0), 56.0, 1e-12);
  EXPECT_NEAR(logits(0, 1), 0.0, 1e-12);  // orthogonal
}

TEST(CosineHead, ScaleInvariantAndBounded) {
  RngStream rng(1, 0);
  for (int trial = 0; trial < 50; ++trial) {
    Tensor2 x = testutil::randn(4, 5, rng);
    Tensor2 w = testutil::randn(3, 5, rng);
    auto a = cosine_head_forward(x, w, 56.0);
    for (double& v : x.data) v *= 10.0;
    auto b = cosine_head_forward(x, w, 56.0);
    for (std::size_t i = 0; i < a.size(); ++i) {
      EXPECT_NEAR(a.data[i], b.data[i], 1e-10);
      EXPECT_LE(std::abs(a.data[i]), 56.0 + 1e-12);
    }
  }
}

TEST(CosineHead, ZeroEmbeddingFlaggedWithZeroLogits) {
  Tensor2 x(2, 2, std::vector<double>{0.0, 0.0, 1.0, 0.0});
  Tensor2 w(1, 2, std::vector<double>{1.0, 1.0});
  std::size_t degenerate = 0;
  auto logits = cosine_head_forward(x, w, 56.0, nullptr, &degenerate);
  EXPECT_EQ(degenerate, 1u);
  EXPECT_EQ(logits(0, 0), 0.0);
  EXPECT_TRUE(all_finite(logits));
}

TEST(CosineHead, ZeroUpstreamGivesZeroGradients) {
  RngStream rng(2, 0);
  Tensor2 x = testutil::randn(3, 4, rng), w = testutil::randn(2, 4, rng);
  CosineHeadCache cache;
  cosine_head_forward(x, w, 56.0, &cache);
  Tensor2 gw(2, 4);
  auto gx = cosine_head_backward(Tensor2(3, 2), cache, gw);
  for (double v : gx.data) EXPECT_EQ(v, 0.0);
  for (double v : gw.data) EXPECT_EQ(v, 0.0);
}

TEST(CosineHead, SingleRowMatchesFiniteDifferences) {
  RngStream rng(3, 0);
  Tensor2 x = testutil::randn(1, 4, rng), w = testutil::randn(1, 4, rng);
  const Tensor2 up(1, 1, 1.0);
  CosineHeadCache cache;
  cosine_head_forward(x, w, 56.0, &cache);
  ParamStore p, g;
  p.add("x", 1, 4).value = x;
  p.add("w", 1, 4).value = w;
  g.add("x", 1, 4);
  g.add("w", 1, 4);
  g.at("x").grad = cosine_head_backward(up, cache, g.at("w").grad);
  auto res = grad_check(
      [&](const ParamStore& s) { return cosine_head_forward(s.value("x"), s.value("w"), 56.0)(0, 0); }, p, g);
  EXPECT_LT(res.max_rel_error, 1e-6);
}

TEST(LayerNorm, ConstantRowMapsToZero) {
  Tensor2 x(1, 4, 5.0), gain(1, 4, 1.0), bias(1, 4);
  auto y = layer_norm_forward(x, gain, bias);
  for (double v : y.data) EXPECT_EQ(v, 0.0);
}

TEST(LayerNorm, StandardizedRowUnchanged) {
  // mean 0, population variance 1
  Tensor2 x(1, 4, std::vector<double>{1.0, -1.0, 1.0, -1.0}), gain(1, 4, 1.0), bias(1, 4);
  auto y = layer_norm_forward(x, gain, bias);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(y.data[i], x.data[i], 1e-10);
}

TEST(LayerNorm, RowStatisticsAndShiftInvariance) {
  RngStream rng(4, 0);
  Tensor2 x = testutil::randn(6, 7, rng, 3.0), gain(1, 7, 1.0), bias(1, 7);
  auto y = layer_norm_forward(x, gain, bias);
  Tensor2 shifted = x;
  for (std::size_t r = 0; r < 6; ++r)
    for (double& v : shifted.row(r)) v += 100.0 * static_cast<double>(r + 1);
  auto ys = layer_norm_forward(shifted, gain, bias);
  for (std::size_t r = 0; r < 6; ++r) {
    double m = 0, v = 0;
    for (double a : y.row(r)) m += a;
    m /= 7;
    for (double a : y.row(r)) v += (a - m) * (a - m);
    EXPECT_LT(std::abs(m), 1e-12);
    EXPECT_NEAR(v / 7, 1.0, 1e-10);
  }
  for (std::size_t i = 0; i < y.size(); ++i) EXPECT_NEAR(y.data[i], ys.data[i], 1e-10);
}

TEST(LayerNorm, BackwardMatchesFiniteDifferences) {
  RngStream rng(5, 0);
  const Tensor2 up = testutil::randn(3, 5, rng);
  ParamStore p, g;
  p.add("x", 3, 5).value = testutil::randn(3, 5, rng);
  p.add("gain", 1, 5).value = testutil::randn(1, 5, rng);
  p.add("bias", 1, 5).value = testutil::randn(1, 5, rng);
  for (auto n : {"x", "gain", "bias"}) g.add(n, p.value(n).rows, p.value(n).cols);
  NormCache cache;
  layer_norm_forward(p.value("x"), p.value("gain"), p.value("bias"), kNormLayerEps, &cache);
  g.at("x").grad = layer_norm_backward(up, cache, p.value("gain"), g.at("gain").grad, g.at("bias").grad);
  auto res = grad_check(
      [&](const ParamStore& s) {
        return weighted_sum(layer_norm_forward(s.value("x"), s.value("gain"), s.value("bias")), up);
      },
      p, g);
  EXPECT_LT(res.max_rel_error, 1e-6);
}

TEST(BatchNorm, IdenticalSamplesTrainToZero) {
  Tensor2 x(2, 3, std::vector<double>{1.0, 2.0, 3.0, 1.0, 2.0, 3.0});
  Tensor2 gain(1, 3, 1.0), bias(1, 3), rm(1, 3), rv(1, 3, 1.0);
  auto y = batch_norm_forward(x, gain, bias, {rm, rv}, NormMode::train);
  for (double v : y.data) EXPECT_EQ(v, 0.0);
}

TEST(BatchNorm, EvalWithUnitStatsIsIdentity) {
  RngStream rng(6, 0);
  Tensor2 x = testutil::randn(4, 3, rng);
  Tensor2 gain(1, 3, 1.0), bias(1, 3), rm(1, 3), rv(1, 3, 1.0);
  auto y = batch_norm_forward(x, gain, bias, {rm, rv}, NormMode::eval);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(y.data[i], x.data[i], 1e-9);
  EXPECT_EQ(rm, Tensor2(1, 3));  // eval never touches running stats
}

TEST(BatchNorm, TrainRejectsSingleSample) {
  Tensor2 x(1, 3), gain(1, 3, 1.0), bias(1, 3), rm(1, 3), rv(1, 3, 1.0);
  EXPECT_THROW(batch_norm_forward(x, gain, bias, {rm, rv}, NormMode::train), std::invalid_argument);
}

TEST(BatchNorm, TrainStatisticsAndRunningUpdate) {
  RngStream rng(7, 0);
  Tensor2 x = testutil::randn(5, 3, rng, 2.0);
  Tensor2 gain(1, 3, 1.0), bias(1, 3), rm(1, 3), rv(1, 3, 1.0);
  auto y = batch_norm_forward(x, gain, bias, {rm, rv, 0.1}, NormMode::train);
  for (std::size_t c = 0; c < 3; ++c) {
    double m = 0, mx = 0, vx = 0;
    for (std::size_t r = 0; r < 5; ++r) {
      m += y(r, c);
      mx += x(r, c);
    }
    EXPECT_LT(std::abs(m / 5), 1e-12);
    mx /= 5;
    for (std::size_t r = 0; r < 5; ++r) vx += (x(r, c) - mx) * (x(r, c) - mx);
    EXPECT_NEAR(rm(0, c), 0.1 * mx, 1e-12);
    EXPECT_NEAR(rv(0, c), 0.9 + 0.1 * vx / 4, 1e-12);
  }
}

TEST(BatchNorm, BackwardMatchesFiniteDifferences) {
  RngStream rng(8, 0);
  const Tensor2 up = testutil::randn(4, 3, rng);
  ParamStore p, g;
  p.add("x", 4, 3).value = testutil::randn(4, 3, rng);
  p.add("gain", 1, 3).value = testutil::randn(1, 3, rng);
  p.add("bias", 1, 3).value = testutil::randn(1, 3, rng);
  for (auto n : {"x", "gain", "bias"}) g.add(n, p.value(n).rows, p.value(n).cols);
  Tensor2 rm(1, 3), rv(1, 3, 1.0);
  NormCache cache;
  batch_norm_forward(p.value("x"), p.value("gain"), p.value("bias"), {rm, rv}, NormMode::train, kNormLayerEps,
                     &cache);
  g.at("x").grad =
      batch_norm_backward(up, cache, NormMode::train, p.value("gain"), g.at("gain").grad, g.at("bias").grad);
  auto res = grad_check(
      [&](const ParamStore& s) {
        Tensor2 m(1, 3), v(1, 3, 1.0);
        return weighted_sum(
            batch_norm_forward(s.value("x"), s.value("gain"), s.value("bias"), {m, v}, NormMode::train), up);
      },
      p, g);
  EXPECT_LT(res.max_rel_error, 1e-6);
}

TEST(Mlp, IdentityNetworkPassesNonnegativeInput) {
  Tensor2 eye(3, 3);
  for (std::size_t i = 0; i < 3; ++i) eye(i, i) = 1.0;
  Tensor2 zero(1, 3);
  Tensor2 x(2, 3, std::vector<double>{0.5, 1.0, 2.0, 0.0, 3.0, 0.25});
  EXPECT_EQ(mlp_forward(x, {eye, zero, eye, zero}), x);
}

TEST(Mlp, NegativeInputYieldsOutputBias) {
  Tensor2 eye(2, 2);
  eye(0, 0) = eye(1, 1) = 1.0;
  Tensor2 zero(1, 2), b2(1, 2, std::vector<double>{0.7, -0.3});
  Tensor2 x(3, 2, -1.0);
  auto y = mlp_forward(x, {eye, zero, eye, b2});
  for (std::size_t r = 0; r < 3; ++r) {
    EXPECT_EQ(y(r, 0), 0.7);
    EXPECT_EQ(y(r, 1), -0.3);
  }
}

TEST(Mlp, MatchesDirectRecomputation) {
  RngStream rng(9, 0);
  Tensor2 w1 = testutil::randn(5, 4, rng), b1 = testutil::randn(1, 5, rng);
  Tensor2 w2 = testutil::randn(3, 5, rng), b2 = testutil::randn(1, 3, rng);
  Tensor2 x = testutil::randn(2, 4, rng);
  auto y = mlp_forward(x, {w1, b1, w2, b2});
  for (std::size_t r = 0; r < 2; ++r)
    for (std::size_t o = 0; o < 3; ++o) {
      double acc = b2(0, o);
      for (std::size_t h = 0; h < 5; ++h) {
        double pre = b1(0, h);
        for (std::size_t i = 0; i < 4; ++i) pre += w1(h, i) * x(r, i);
        acc += w2(o, h) * std::max(pre, 0.0);
      }
      EXPECT_NEAR(y(r, o), acc, 1e-12);
    }
}

TEST(Conv, BackwardMatchesFiniteDifferences) {
  RngStream rng(10, 0);
  FeatureMap x(2, 2, 5, 4);
  for (double& v : x.data) v = rng.normal();
  ParamStore p, g;
  p.add("w", 3, 18).value = testutil::randn(3, 18, rng);
  p.add("b", 1, 3).value = testutil::randn(1, 3, rng);
  g.add("w", 3, 18);
  g.add("b", 1, 3);
  auto y = conv3x3s2_forward(x, p.value("w"), p.value("b"));
  FeatureMap up(y.batch, y.channels, y.height, y.width);
  for (double& v : up.data) v = rng.normal();
  conv3x3s2_backward(up, x, p.value("w"), g.at("w").grad, g.at("b").grad, false);
  auto res = grad_check(
      [&](const ParamStore& s) {
        auto out = conv3x3s2_forward(x, s.value("w"), s.value("b"));
        double acc = 0.0;
        for (std::size_t i = 0; i < out.data.size(); ++i) acc += out.data[i] * up.data[i];
        return acc;
      },
      p, g);
  EXPECT_LT(res.max_rel_error, 1e-8);
  EXPECT_EQ(y.height, conv_out_size(5));
  EXPECT_EQ(y.width, conv_out_size(4));
}

TEST(Encoder, ZeroInputZeroBiasesGivesZeroEmbedding) {
  for (auto variant : {EncoderVariant::teacher_toy, EncoderVariant::student_toy}) {
    auto cfg = tiny_config(variant, EmbeddingNorm::layer_norm);
    cfg.encoder.input_offset = 0.0;
    RngStream rng(11, 0);
    SceneModel m(cfg, rng);
    auto f = m.forward_eval({MelSpectrogram(8, 8), MelSpectrogram(8, 8)});
    for (double v : f.pre_norm.data) EXPECT_EQ(v, 0.0);
  }
}

TEST(Encoder, EmbeddingDimForAllWidths) {
  RngStream rng(12, 0);
  const auto batch = testutil::random_batch(3, 16, 12, rng);
  for (std::size_t w = 1; w <= 5; ++w)
    for (auto variant : {EncoderVariant::teacher_toy, EncoderVariant::student_toy})
      for (auto pooling : {Pooling::global, Pooling::time}) {
        ModelConfig cfg;
        cfg.encoder = {variant, 16, 12, 10, w, EmbeddingNorm::layer_norm, -40.0, 0.05, pooling};
        cfg.head = {4, 10, 56.0};
        cfg.projection = {10, 10, 3};
        SceneModel m(cfg, rng);
        auto f = m.forward_eval(batch, true);
        EXPECT_EQ(f.embedding.rows, 3u);
        EXPECT_EQ(f.embedding.cols, 10u);
        EXPECT_EQ(f.logits.cols, 4u);
        EXPECT_EQ(f.projection.cols, 3u);
      }
}

TEST(Encoder, DoublingWidthQuadruplesConvParameters) {
  RngStream rng(13, 0);
  for (auto variant : {EncoderVariant::teacher_toy, EncoderVariant::student_toy}) {
    std::size_t prev = 0;
    for (std::size_t w : {2u, 4u}) {
      auto cfg = tiny_config(variant, EmbeddingNorm::none);
      cfg.encoder.width = w;
      SceneModel m(cfg, rng);
      const std::size_t conv = m.params().count("encoder.conv");
      if (prev) {
        const double ratio = static_cast<double>(conv) / static_cast<double>(prev);
        EXPECT_GT(ratio, 3.5);
        EXPECT_LE(ratio, 4.0);
      }
      prev = conv;
    }
  }
}

TEST(Encoder, EvalForwardIsDeterministicAndPure) {
  RngStream rng(14, 0);
  SceneModel m(tiny_config(EncoderVariant::student_toy, EmbeddingNorm::batch_norm, Pooling::time), rng);
  const auto batch = testutil::random_batch(4, 8, 8, rng);
  const auto before = m.params().fingerprint();
  auto a = m.forward_eval(batch, true);
  auto b = m.forward_eval(batch, true);
  EXPECT_EQ(a.embedding, b.embedding);
  EXPECT_EQ(a.logits, b.logits);
  EXPECT_EQ(a.projection, b.projection);
  EXPECT_EQ(m.params().fingerprint(), before);
}

TEST(Encoder, TrainModeUpdatesBatchNormStatistics) {
  RngStream rng(15, 0);
  SceneModel m(tiny_config(EncoderVariant::student_toy, EmbeddingNorm::batch_norm), rng);
  const auto before = m.params().value("encoder.norm.running_mean");
  m.forward(testutil::random_batch(4, 8, 8, rng), {NormMode::train, true, false});
  EXPECT_NE(m.params().value("encoder.norm.running_mean"), before);
}

TEST(Encoder, PreLayerNormTapDiffersFromEmbedding) {
  RngStream rng(16, 0);
  SceneModel m(tiny_config(EncoderVariant::student_toy, EmbeddingNorm::layer_norm, Pooling::time), rng);
  auto f = m.forward_eval(testutil::random_batch(3, 8, 8, rng));
  EXPECT_NE(f.pre_norm, f.embedding);
}

TEST(Encoder, ConfigValidation) {
  auto cfg = tiny_config(EncoderVariant::teacher_toy, EmbeddingNorm::none);
  cfg.head.embed_dim = 5;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  cfg = tiny_config(EncoderVariant::teacher_toy, EmbeddingNorm::none);
  cfg.projection.in_dim = 2;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  cfg = tiny_config(EncoderVariant::teacher_toy, EmbeddingNorm::none);
  RngStream rng(17, 0);
  SceneModel m(cfg, rng);
  EXPECT_THROW(m.forward_eval({MelSpectrogram(4, 8)}), std::invalid_argument);
}

TEST(Encoder, DefaultConfigs) {
  auto t = default_teacher_config(10);
  EXPECT_EQ(t.encoder.embed_dim, 768u);
  EXPECT_EQ(t.head.gamma, 56.0);
  EXPECT_EQ(t.projection.out_dim, 128u);
  auto s = default_student_config(10);
  EXPECT_EQ(s.encoder.norm, EmbeddingNorm::layer_norm);
  EXPECT_DOUBLE_EQ(student_variant_peak_lr(0), 0.04);
  EXPECT_DOUBLE_EQ(student_variant_peak_lr(4), 0.01);
  EXPECT_THROW(student_variant_peak_lr(5), std::out_of_range);
}

TEST(Freeze, FrozenEntryGetsGradientButNoUpdate) {
  RngStream rng(18, 0);
  SceneModel m(tiny_config(EncoderVariant::teacher_toy, EmbeddingNorm::none), rng);
  m.params().set_frozen("cls.", true);
  const auto w_before = m.params().value("cls.weight");
  auto f = m.forward(testutil::random_batch(3, 8, 8, rng), {NormMode::train, true, false});
  m.params().zero_grad();
  m.backward(f, testutil::randn(3, 3, rng), Tensor2());
  double gsum = 0.0;
  for (double v : m.params().grad("cls.weight").data) gsum += std::abs(v);
  EXPECT_GT(gsum, 0.0);
  OptimConfig oc;
  oc.epochs = 1;
  AdamW opt(oc);
  opt.step(m.params(), 0.1);
  EXPECT_EQ(m.params().value("cls.weight"), w_before);
  EXPECT_NE(m.params().fingerprint("encoder."), 0u);
}

TEST(Checkpoint, RoundTripIsBitExact) {
  RngStream rng(19, 0);
  SceneModel m(tiny_config(EncoderVariant::student_toy, EmbeddingNorm::batch_norm, Pooling::time), rng);
  m.params().set_frozen("encoder.", true);
  const fs::path dir = fs::temp_directory_path() / "scenedistill_ckpt_test";
  fs::remove_all(dir);
  save_checkpoint(dir / "m.bin", m);
  EXPECT_TRUE(fs::exists(dir / "m.bin.json"));
  SceneModel back = load_checkpoint(dir / "m.bin");
  EXPECT_TRUE(back.params() == m.params());
  EXPECT_EQ(back.config().encoder.pooling, Pooling::time);
  EXPECT_EQ(back.config().encoder.norm, EmbeddingNorm::batch_norm);
  EXPECT_TRUE(back.params().at("encoder.norm.running_var").buffer);
  EXPECT_TRUE(back.params().at("encoder.conv0.weight").frozen);
  fs::remove_all(dir);
}

TEST(Checkpoint, CorruptionIsReported) {
  RngStream rng(20, 0);
  SceneModel m(tiny_config(EncoderVariant::teacher_toy, EmbeddingNorm::none), rng);
  const std::string bytes = encode_params(m.params());
  EXPECT_TRUE(decode_params(bytes) == m.params());
  EXPECT_THROW(decode_params(bytes.substr(0, bytes.size() - 3)), CheckpointError);
  EXPECT_THROW(decode_params(bytes + "x"), CheckpointError);
  std::string bad = bytes;
  bad[0] = 'X';
  EXPECT_THROW(decode_params(bad), CheckpointError);
  EXPECT_THROW(load_checkpoint(fs::temp_directory_path() / "scenedistill_no_such.bin"), MissingInputError);
}
