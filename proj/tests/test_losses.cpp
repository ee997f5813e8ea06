#include <cmath>
#include <random>

#include "test_util.hpp"
#include "v2v/v2v.hpp"

using namespace v2v;
using v2v::test::random_tensor;

namespace {

Tensor labels_of(const Shape& s, std::int64_t classes, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Tensor t(s);
  for (auto& v : t.values()) v = static_cast<float>(std::uniform_int_distribution<std::int64_t>(0, classes - 1)(rng));
  return t;
}

// Central differences of a loss in f64 around f32 inputs.
double numeric_grad(const std::function<double(const Tensor&)>& f, Tensor x, std::size_t i, float eps) {
  const float orig = x[i];
  x[i] = orig + eps;
  const double up = f(x);
  const float step_up = x[i] - orig;
  x[i] = orig - eps;
  const double down = f(x);
  const float step_down = orig - x[i];
  return (up - down) / (static_cast<double>(step_up) + step_down);
}

}  // namespace

TEST(SoftmaxCE, UniformLogitsGiveLogK) {
  const Tensor labels = labels_of(Shape{2, 3, 3}, 2, 1);
  EXPECT_NEAR(softmax_ce_loss(Tensor(Shape{2, 2, 3, 3}), labels).loss, std::log(2.0), 1e-6);
  for (std::int64_t K : {3, 8, 21})
    EXPECT_NEAR(softmax_ce_loss(Tensor(Shape{K, 1, 2, 2}), labels_of(Shape{1, 2, 2}, K, 2)).loss, std::log(double(K)), 1e-6);
}

TEST(SoftmaxCE, SaturatedCorrectPrediction) {
  const Tensor labels = labels_of(Shape{2, 2, 2}, 4, 3);
  Tensor logits(Shape{4, 2, 2, 2});
  for (std::size_t v = 0; v < 8; ++v) logits[static_cast<std::size_t>(labels[v]) * 8 + v] = 50.0f;
  EXPECT_LT(softmax_ce_loss(logits, labels).loss, 1e-6f);
}

TEST(SoftmaxCE, MatchesPerVoxelOracleAndDifferences) {
  const Tensor logits = random_tensor(Shape{3, 2, 2, 2}, 4);
  const Tensor labels = labels_of(Shape{2, 2, 2}, 3, 5);
  double want = 0.0;
  for (std::size_t v = 0; v < 8; ++v) {
    double z = 0.0;
    for (std::size_t k = 0; k < 3; ++k) z += std::exp(static_cast<double>(logits[k * 8 + v]));
    want += std::log(z) - logits[static_cast<std::size_t>(labels[v]) * 8 + v];
  }
  const LossResult r = softmax_ce_loss(logits, labels);
  EXPECT_NEAR(r.loss, want / 8, 1e-6);
  auto f = [&](const Tensor& t) { return static_cast<double>(softmax_ce_loss(t, labels).loss); };
  for (std::size_t i = 0; i < logits.size(); ++i) EXPECT_NEAR(r.grad[i], numeric_grad(f, logits, i, 1e-2f), 1e-3) << i;
}

TEST(SoftmaxCE, ShiftInvariant) {
  const Tensor logits = random_tensor(Shape{5, 2, 3, 3}, 6);
  const Tensor labels = labels_of(Shape{2, 3, 3}, 5, 7);
  Tensor shifted = logits;
  const Tensor shift = random_tensor(Shape{18}, 8, 10.0f);
  for (std::size_t k = 0; k < 5; ++k)
    for (std::size_t v = 0; v < 18; ++v) shifted[k * 18 + v] += shift[v];
  EXPECT_NEAR(softmax_ce_loss(logits, labels).loss, softmax_ce_loss(shifted, labels).loss, 1e-5);
}

TEST(SoftmaxCE, IgnoreLabelAndRange) {
  Tensor labels(Shape{1, 1, 2}, std::vector<float>{1, static_cast<float>(kIgnoreLabel)});
  Tensor logits(Shape{2, 1, 1, 2}, std::vector<float>{0, 0, 3, -100});
  const LossResult r = softmax_ce_loss(logits, labels);
  EXPECT_NEAR(r.loss, std::log1p(std::exp(-3.0)), 1e-6);
  EXPECT_EQ(r.grad[1], 0.0f);
  EXPECT_EQ(r.grad[3], 0.0f);
  labels[1] = 2.0f;
  EXPECT_V2V_ERROR(softmax_ce_loss(logits, labels), ErrorCode::LabelOutOfRange);
}

TEST(Huber, LiteralValues) {
  EXPECT_DOUBLE_EQ(huber_value(0.5), 0.125);
  EXPECT_DOUBLE_EQ(huber_value(2.0), 2.0);
  EXPECT_DOUBLE_EQ(huber_value(-2.0), 2.0);
  EXPECT_DOUBLE_EQ(huber_value(1.0), 0.5);
  EXPECT_DOUBLE_EQ(huber_value(2.0, HuberVariant::Smooth), 1.5);
}

TEST(Huber, GradientAtTwoIsOne) {
  const LossResult r = huber_loss(Tensor(Shape{1}, 2.0f), Tensor(Shape{1}));
  EXPECT_FLOAT_EQ(r.loss, 2.0f);
  EXPECT_FLOAT_EQ(r.grad[0], 1.0f);
}

TEST(Huber, EqualInputsGiveZero) {
  const Tensor p = random_tensor(Shape{2, 2, 3, 3}, 1);
  const LossResult r = huber_loss(p, p);
  EXPECT_EQ(r.loss, 0.0f);
  for (float g : r.grad.values()) EXPECT_EQ(g, 0.0f);
}

TEST(Huber, GradientBoundedByInverseCount) {
  const Tensor p = random_tensor(Shape{2, 2, 4, 4}, 2, 5.0f);
  const Tensor t = random_tensor(p.shape(), 3, 5.0f);
  const LossResult r = huber_loss(p, t);
  const float bound = 1.0f / static_cast<float>(p.size());
  for (float g : r.grad.values()) EXPECT_LE(std::abs(g), bound * (1.0f + 1e-6f));
}

TEST(Huber, GradientMatchesDifferences) {
  Tensor p = random_tensor(Shape{2, 1, 2, 3}, 4, 2.0f);
  const Tensor t = random_tensor(p.shape(), 5);
  // Keep residuals away from the |x| = 1 seam where the literal value jumps.
  for (std::size_t i = 0; i < p.size(); ++i)
    if (std::abs(std::abs(p[i] - t[i]) - 1.0f) < 0.05f) p[i] += 0.2f;
  for (auto v : {HuberVariant::Literal, HuberVariant::Smooth}) {
    const LossResult r = huber_loss(p, t, v);
    auto f = [&](const Tensor& x) { return static_cast<double>(huber_loss(x, t, v).loss); };
    for (std::size_t i = 0; i < p.size(); ++i) EXPECT_NEAR(r.grad[i], numeric_grad(f, p, i, 1e-2f), 1e-4) << i;
  }
}

TEST(L2, ValuesAndGradient) {
  const Tensor t = random_tensor(Shape{3, 1, 2, 2}, 6);
  EXPECT_EQ(l2_loss(t, t).loss, 0.0f);
  Tensor p = t;
  for (auto& v : p.values()) v += 1.0f;
  EXPECT_FLOAT_EQ(l2_loss(p, t).loss, 0.5f);
  const Tensor q = random_tensor(t.shape(), 7);
  const LossResult r = l2_loss(q, t);
  auto f = [&](const Tensor& x) { return static_cast<double>(l2_loss(x, t).loss); };
  for (std::size_t i = 0; i < q.size(); ++i) EXPECT_NEAR(r.grad[i], numeric_grad(f, q, i, 1e-2f), 1e-4) << i;
}

TEST(FlowScaling, Examples) {
  const FlowScaling s(15.0f);
  const Tensor f(Shape{1}, 30.0f);
  EXPECT_FLOAT_EQ(flow_scale(f, s)[0], 2.0f);
  EXPECT_FLOAT_EQ(flow_descale(flow_scale(f, s), s)[0], 30.0f);
  EXPECT_FLOAT_EQ(flow_scale(Tensor(Shape{1}, 15.0f), s)[0], 1.0f);
  EXPECT_EQ(flow_scale(Tensor(Shape{4}), s), Tensor(Shape{4}));
  EXPECT_V2V_ERROR(FlowScaling(0.0f), ErrorCode::InvalidConfig);
}

TEST(FlowScaling, RoundTripWithinOneUlp) {
  const Tensor f = random_tensor(Shape{2, 4, 8, 8}, 8, 20.0f);
  const FlowScaling s(15.0f);
  const Tensor back = flow_descale(flow_scale(f, s), s);
  for (std::size_t i = 0; i < f.size(); ++i) {
    const float lo = std::nextafter(f[i], -INFINITY), hi = std::nextafter(f[i], INFINITY);
    ASSERT_GE(back[i], lo);
    ASSERT_LE(back[i], hi);
  }
}

TEST(Epe, Examples) {
  const Tensor gt = random_tensor(Shape{2, 2, 3, 3}, 9);
  EXPECT_EQ(epe(gt, gt), 0.0f);
  Tensor p = gt;
  for (std::size_t i = 0; i < 18; ++i) {
    p[i] += 3.0f;
    p[18 + i] += 4.0f;
  }
  EXPECT_NEAR(epe(p, gt), 5.0f, 1e-5);
}

TEST(Ade, Examples) {
  Tensor gt(Shape{3, 2, 2, 2}, 0.5f);
  EXPECT_EQ(ade(gt, gt), 0.0f);
  Tensor p = gt;
  for (std::size_t i = 0; i < 8; ++i) p[i] += 0.1f;
  EXPECT_NEAR(ade(p, gt), 0.1f, 1e-6);
}

TEST(Metrics, NonNegativeSymmetric) {
  for (std::uint64_t s = 0; s < 10; ++s) {
    const Tensor a = random_tensor(Shape{2, 2, 3, 3}, s), b = random_tensor(Shape{2, 2, 3, 3}, 100 + s);
    EXPECT_GT(epe(a, b), 0.0f);
    EXPECT_EQ(epe(a, b), epe(b, a));
    const Tensor c = random_tensor(Shape{3, 2, 3, 3}, 200 + s, 0.3f), d = random_tensor(Shape{3, 2, 3, 3}, 300 + s, 0.3f);
    EXPECT_GE(ade(c, d), 0.0f);
    EXPECT_EQ(ade(c, d), ade(d, c));
  }
}

TEST(SegAccuracy, PerfectOneHot) {
  const Tensor labels = labels_of(Shape{2, 3, 3}, 4, 10);
  Tensor logits(Shape{4, 2, 3, 3});
  for (std::size_t v = 0; v < 18; ++v) logits[static_cast<std::size_t>(labels[v]) * 18 + v] = 1.0f;
  const SegScore s = seg_accuracy(logits, labels);
  EXPECT_EQ(s.accuracy, 1.0f);
  EXPECT_EQ(s.cm.total(), 18);
  EXPECT_EQ(s.cm.trace(), 18);
}

TEST(SegAccuracy, TiesGoToClassZero) {
  const SegScore s = seg_accuracy(Tensor(Shape{8, 2, 2, 2}), Tensor(Shape{2, 2, 2}));
  EXPECT_EQ(s.accuracy, 1.0f);
}

TEST(SegAccuracy, ScaleInvariantAndCountsVoxels) {
  const Tensor logits = random_tensor(Shape{5, 2, 4, 4}, 11);
  Tensor labels = labels_of(Shape{2, 4, 4}, 5, 12);
  labels[0] = static_cast<float>(kIgnoreLabel);
  Tensor scaled = logits;
  for (auto& v : scaled.values()) v *= 3.7f;
  const SegScore a = seg_accuracy(logits, labels), b = seg_accuracy(scaled, labels);
  EXPECT_EQ(a.cm, b.cm);
  EXPECT_EQ(a.cm.total(), 31);
  EXPECT_DOUBLE_EQ(a.accuracy, static_cast<float>(static_cast<double>(a.cm.trace()) / 31.0));
}
