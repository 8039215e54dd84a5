#include <gtest/gtest.h>

#include <cmath>

#include "scenedistill/grad_check.hpp"
#include "scenedistill/losses.hpp"
#include "scenedistill/numerics.hpp"
#include "test_util.hpp"

using namespace scenedistill;

namespace {

double check_fn(const Tensor2& x, const Tensor2& analytic, const std::function<double(const Tensor2&)>& f) {
  ParamStore p, g;
  p.add("x", x.rows, x.cols).value = x;
  g.add("x", x.rows, x.cols).grad = analytic;
  return grad_check([&](const ParamStore& s) { return f(s.value("x")); }, p, g).max_rel_error;
}

/// Soft SupCon evaluated directly in long double.
long double supcon_oracle(const Tensor2& z, const Tensor2& w, double tau, std::size_t* used = nullptr) {
  const std::size_t b = z.rows;
  std::vector<std::vector<long double>> u(b);
  for (std::size_t i = 0; i < b; ++i) {
    long double n = 0;
    for (double v : z.row(i)) n += static_cast<long double>(v) * v;
    n = std::sqrt(n);
    for (double v : z.row(i)) u[i].push_back(v / n);
  }
  long double total = 0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < b; ++i) {
    long double num = 0, den = 0, mass = 0;
    for (std::size_t k = 0; k < b; ++k) {
      if (k == i) continue;
      long double s = 0;
      for (std::size_t d = 0; d < z.cols; ++d) s += u[i][d] * u[k][d];
      const long double e = std::exp(s / tau);
      num += w(i, k) * e;
      den += e;
      mass += w(i, k);
    }
    if (mass < 1e-12) continue;
    total -= std::log(num / den);
    ++count;
  }
  if (used) *used = count;
  return count ? total / count : 0;
}

}  // namespace

TEST(SimilarityWeights, MixedLabelDotProduct) {
  Tensor2 y(2, 2, std::vector<double>{0.7, 0.3, 0.7, 0.3});
  auto w = similarity_weights(y);
  EXPECT_NEAR(w(0, 1), 0.58, 1e-15);
  EXPECT_EQ(w(0, 1), w(1, 0));
}

TEST(SoftSupCon, IdenticalOneHotPairIsZero) {
  RngStream rng(1, 0);
  const Tensor2 z = testutil::randn(2, 3, rng);
  auto r = soft_supcon_loss(z, similarity_weights(one_hot({1, 1}, 3)), 0.2);
  EXPECT_EQ(r.loss, 0.0);
  EXPECT_EQ(r.excluded, 0u);
}

TEST(SoftSupCon, OrthogonalLabelsExcludeEveryAnchor) {
  RngStream rng(2, 0);
  auto r = soft_supcon_loss(testutil::randn(2, 3, rng), similarity_weights(one_hot({0, 1}, 2)), 0.2);
  EXPECT_EQ(r.loss, 0.0);
  EXPECT_EQ(r.excluded, 2u);
  EXPECT_TRUE(r.all_excluded);
  for (double g : r.grad.data) EXPECT_EQ(g, 0.0);
}

TEST(SoftSupCon, RejectsSingleSample) {
  EXPECT_THROW(soft_supcon_loss(Tensor2(1, 3, 1.0), Tensor2(1, 1, 1.0), 0.2), std::invalid_argument);
}

TEST(SoftSupCon, MatchesHighPrecisionOracleAndGradient) {
  RngStream rng(3, 0);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor2 z = testutil::randn(4, 5, rng);
    const Tensor2 w = similarity_weights(testutil::random_soft_labels(4, 3, rng));
    auto r = soft_supcon_loss(z, w, 0.2);
    EXPECT_NEAR(r.loss, static_cast<double>(supcon_oracle(z, w, 0.2)), 1e-12);
    EXPECT_LT(check_fn(z, r.grad, [&](const Tensor2& x) { return soft_supcon_loss(x, w, 0.2).loss; }), 1e-4);
  }
}

TEST(SoftSupCon, PartialExclusionAveragesOverRemainingAnchors) {
  RngStream rng(4, 0);
  const Tensor2 z = testutil::randn(3, 4, rng);
  const Tensor2 w = similarity_weights(one_hot({0, 0, 1}, 2));
  auto r = soft_supcon_loss(z, w, 0.5);
  std::size_t used = 0;
  const double oracle = static_cast<double>(supcon_oracle(z, w, 0.5, &used));
  EXPECT_EQ(r.excluded, 1u);
  EXPECT_EQ(used, 2u);
  EXPECT_NEAR(r.loss, oracle, 1e-12);
}

TEST(SoftSupCon, InvariantToPerAnchorSimilarityShift) {
  RngStream rng(5, 0);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor2 sim = testutil::randn(5, 5, rng, 3.0);
    const Tensor2 w = similarity_weights(testutil::random_soft_labels(5, 3, rng));
    const double base = soft_supcon_from_similarities(sim, w).loss;
    for (std::size_t i = 0; i < 5; ++i) {
      const double c = rng.uniform(-20, 20);
      for (double& v : sim.row(i)) v += c;
    }
    EXPECT_NEAR(soft_supcon_from_similarities(sim, w).loss, base, 1e-10);
  }
}

TEST(CrossEntropy, UniformLogits) {
  auto r = cross_entropy_soft(Tensor2(3, 10, 0.7), one_hot({0, 4, 9}, 10));
  EXPECT_NEAR(r.loss, std::log(10.0), 1e-14);
}

TEST(CrossEntropy, LargeMarginApproachesZero) {
  Tensor2 logits(1, 3);
  logits(0, 1) = 100.0;
  EXPECT_LT(cross_entropy_soft(logits, one_hot({1}, 3)).loss, 1e-40);
}

TEST(CrossEntropy, GradientMatchesFiniteDifferences) {
  RngStream rng(6, 0);
  const Tensor2 logits = testutil::randn(4, 5, rng, 2.0);
  const Tensor2 y = testutil::random_soft_labels(4, 5, rng);
  auto r = cross_entropy_soft(logits, y);
  EXPECT_LT(check_fn(logits, r.grad, [&](const Tensor2& x) { return cross_entropy_soft(x, y).loss; }), 1e-6);
}

TEST(FinetuneLoss, LambdaEndpointsAndRecombination) {
  RngStream rng(7, 0);
  const Tensor2 logits = testutil::randn(4, 3, rng, 2.0);
  const Tensor2 y = one_hot({0, 1, 2, 0}, 3);
  const Tensor2 z = testutil::randn(4, 5, rng);
  const Tensor2 w = similarity_weights(testutil::random_soft_labels(4, 3, rng));
  const double ce = cross_entropy_soft(logits, y).loss;
  const double ssc = soft_supcon_loss(z, w, 0.2).loss;
  LossConfig cfg;
  cfg.lambda = 1.0;
  EXPECT_EQ(finetune_loss(logits, y, z, w, cfg).total, ce);
  cfg.lambda = 0.0;
  EXPECT_NEAR(finetune_loss(logits, y, z, w, cfg).total, ssc, 1e-15);
  cfg.lambda = 0.25;
  auto r = finetune_loss(logits, y, z, w, cfg);
  EXPECT_NEAR(r.total, 0.25 * ce + 0.75 * ssc, 1e-12);
  EXPECT_EQ(r.ce, ce);
  EXPECT_EQ(r.supcon, ssc);
}

TEST(KdLoss, EqualLogitsGiveZero) {
  RngStream rng(8, 0);
  const Tensor2 t = testutil::randn(3, 4, rng);
  auto r = kd_loss(t, t, 2.0);
  EXPECT_NEAR(r.loss, 0.0, 1e-15);
  for (double g : r.grad.data) EXPECT_NEAR(g, 0.0, 1e-15);
}

TEST(KdLoss, HandEvaluatedTwoClassCase) {
  Tensor2 s(1, 2, std::vector<double>{std::log(3.0), 0.0});
  Tensor2 t(1, 2, std::vector<double>{0.0, 0.0});
  const double expected = 0.5 * std::log(0.5 / 0.75) + 0.5 * std::log(0.5 / 0.25);
  EXPECT_NEAR(kd_loss(s, t, 1.0).loss, expected, 1e-12);
  EXPECT_NEAR(expected, 0.1438410362, 1e-9);
}

TEST(KdLoss, NonNegativeWithTemperatureSquaredScaling) {
  RngStream rng(9, 0);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor2 s = testutil::randn(3, 4, rng, 3.0), t = testutil::randn(3, 4, rng, 3.0);
    const double l2 = kd_loss(s, t, 2.0).loss;
    EXPECT_GE(l2, 0.0);
    Tensor2 s2 = s, t2 = t;
    for (double& v : s2.data) v /= 2.0;
    for (double& v : t2.data) v /= 2.0;
    EXPECT_NEAR(l2, 4.0 * kd_loss(s2, t2, 1.0).loss, 1e-12);
    auto r = kd_loss(s, t, 2.0);
    EXPECT_LT(check_fn(s, r.grad, [&](const Tensor2& x) { return kd_loss(x, t, 2.0).loss; }), 1e-6);
  }
}

TEST(CrdLoss, HandEvaluatedOrthogonalPair) {
  Tensor2 q(2, 2, std::vector<double>{1.0, 0.0, 0.0, 1.0});
  auto r = crd_loss(q, q, 1.0);
  EXPECT_NEAR(r.loss, std::log1p(std::exp(-1.0)), 1e-12);
  EXPECT_NEAR(r.loss, 0.3132616875, 1e-9);
}

TEST(CrdLoss, PositiveAndPermutationInvariant) {
  RngStream rng(10, 0);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor2 q = testutil::randn(5, 3, rng), k = testutil::randn(5, 3, rng);
    const double base = crd_loss(q, k, 0.07).loss;
    EXPECT_GT(base, 0.0);
    const auto perm = rng.permutation(5);
    Tensor2 qp(5, 3), kp(5, 3);
    for (std::size_t i = 0; i < 5; ++i)
      for (std::size_t d = 0; d < 3; ++d) {
        qp(i, d) = q(perm[i], d);
        kp(i, d) = k(perm[i], d);
      }
    EXPECT_NEAR(crd_loss(qp, kp, 0.07).loss, base, 1e-12);
  }
}

TEST(CrdLoss, WalkingStudentKeyTowardItsQueryLowersLoss) {
  // The other queries are orthogonal to the path of key 0.
  RngStream rng(11, 0);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor2 q(4, 4), k(4, 4);
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t d = 0; d < 2; ++d) {
        const std::size_t col = i == 0 ? d : d + 2;
        q(i, col) = rng.normal();
        k(i, col) = rng.normal();
      }
    const auto qn = normalize_rows(q).unit;
    const auto kn = normalize_rows(k).unit;
    double prev = crd_loss(q, kn, 0.5).loss;
    for (int step = 1; step <= 5; ++step) {
      const double t = 0.2 * step;
      Tensor2 moved = kn;
      for (std::size_t d = 0; d < 4; ++d) moved(0, d) = (1 - t) * kn(0, d) + t * qn(0, d);
      const double now = crd_loss(q, moved, 0.5).loss;
      EXPECT_LE(now, prev + 1e-12);
      prev = now;
    }
  }
}

TEST(CrdLoss, NegativeGradientStepLowersLoss) {
  RngStream rng(15, 0);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor2 q = testutil::randn(5, 3, rng), k = testutil::randn(5, 3, rng);
    const auto r = crd_loss(q, k, 0.2);
    double step = 1.0;
    Tensor2 next = k;
    for (int tries = 0; tries < 40; ++tries, step *= 0.5) {
      for (std::size_t i = 0; i < k.size(); ++i) next.data[i] = k.data[i] - step * r.grad_student.data[i];
      if (crd_loss(q, next, 0.2).loss < r.loss) break;
    }
    EXPECT_LT(crd_loss(q, next, 0.2).loss, r.loss);
  }
}

TEST(CrdLoss, GradientsBothSides) {
  RngStream rng(12, 0);
  const Tensor2 q = testutil::randn(4, 3, rng), k = testutil::randn(4, 3, rng);
  auto r = crd_loss(q, k, 0.07);
  EXPECT_LT(check_fn(k, r.grad_student, [&](const Tensor2& x) { return crd_loss(q, x, 0.07).loss; }), 1e-4);
  EXPECT_LT(check_fn(q, r.grad_teacher, [&](const Tensor2& x) { return crd_loss(x, k, 0.07).loss; }), 1e-4);
  EXPECT_THROW(crd_loss(Tensor2(1, 3, 1.0), Tensor2(1, 3, 1.0), 0.07), std::invalid_argument);
}

TEST(DistillLoss, ReducesToCrossEntropy) {
  RngStream rng(13, 0);
  const Tensor2 s = testutil::randn(3, 4, rng), t = testutil::randn(3, 4, rng);
  const std::vector<std::size_t> hard{0, 3, 1};
  LossConfig cfg;
  cfg.alpha = 1.0;
  cfg.beta = 0.0;
  auto r = distill_loss(s, hard, t, Tensor2(), Tensor2(), cfg);
  EXPECT_EQ(r.total, cross_entropy_soft(s, one_hot(hard, 4)).loss);
}

TEST(DistillLoss, WeightedRecombinationAndGradient) {
  RngStream rng(14, 0);
  const Tensor2 s = testutil::randn(4, 3, rng, 2.0), t = testutil::randn(4, 3, rng, 2.0);
  const Tensor2 q = testutil::randn(4, 5, rng), k = testutil::randn(4, 5, rng);
  const std::vector<std::size_t> hard{0, 1, 2, 1};
  const LossConfig cfg;
  auto r = distill_loss(s, hard, t, q, k, cfg);
  const double ce = cross_entropy_soft(s, one_hot(hard, 3)).loss;
  const double kd = kd_loss(s, t, cfg.tau_kd).loss;
  const double crd = crd_loss(q, k, cfg.tau_crd).loss;
  EXPECT_NEAR(r.total, 0.02 * ce + 0.98 * kd + 0.1 * crd, 1e-12);
  EXPECT_LT(check_fn(s, r.grad_student_logits,
                     [&](const Tensor2& x) { return distill_loss(x, hard, t, q, k, cfg).total; }),
            1e-4);
  EXPECT_LT(check_fn(k, r.grad_student_projection,
                     [&](const Tensor2& x) { return distill_loss(s, hard, t, q, x, cfg).total; }),
            1e-4);
}

TEST(LossConfig, DefaultsAndValidation) {
  LossConfig c;
  EXPECT_EQ(c.lambda, 0.25);
  EXPECT_EQ(c.tau_supcon, 0.2);
  EXPECT_EQ(c.alpha, 0.02);
  EXPECT_EQ(c.beta, 0.1);
  EXPECT_EQ(c.tau_kd, 2.0);
  EXPECT_EQ(c.tau_crd, 0.07);
  EXPECT_EQ(c.gamma, 56.0);
  c.tau_crd = 0.0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = LossConfig{};
  c.lambda = 1.5;
  EXPECT_THROW(c.validate(), std::invalid_argument);
}
