#include <cmath>
#include <random>

#include "test_util.hpp"
#include "v2v/v2v.hpp"

using namespace v2v;
using v2v::test::random_tensor;

namespace {

// Direct loops over output voxels, channels and taps.
Tensor naive_conv(const Tensor& x, const Tensor& w, const Tensor& b, const ConvGeometry& g) {
  const std::int64_t C = x.dim(0), L = x.dim(1), H = x.dim(2), W = x.dim(3), O = w.dim(0);
  const auto od = conv_out_dims({L, H, W}, g);
  Tensor y(Shape{O, od[0], od[1], od[2]});
  for (std::int64_t o = 0; o < O; ++o)
    for (std::int64_t l = 0; l < od[0]; ++l)
      for (std::int64_t h = 0; h < od[1]; ++h)
        for (std::int64_t v = 0; v < od[2]; ++v) {
          double s = b[static_cast<std::size_t>(o)];
          for (std::int64_t c = 0; c < C; ++c)
            for (std::int64_t kl = 0; kl < g.kernel[0]; ++kl)
              for (std::int64_t kh = 0; kh < g.kernel[1]; ++kh)
                for (std::int64_t kw = 0; kw < g.kernel[2]; ++kw) {
                  const std::int64_t il = l * g.stride[0] - g.pad[0] + kl;
                  const std::int64_t ih = h * g.stride[1] - g.pad[1] + kh;
                  const std::int64_t iw = v * g.stride[2] - g.pad[2] + kw;
                  if (il < 0 || ih < 0 || iw < 0 || il >= L || ih >= H || iw >= W) continue;
                  s += static_cast<double>(x(c, il, ih, iw)) * w(o, c, kl, kh, kw);
                }
          y(o, l, h, v) = static_cast<float>(s);
        }
  return y;
}

// Every input voxel scatters its kernel-weighted value into the output.
Tensor naive_deconv(const Tensor& x, const Tensor& w, const Tensor& b, const ConvGeometry& g) {
  const std::int64_t C = x.dim(0), L = x.dim(1), H = x.dim(2), W = x.dim(3), O = w.dim(1);
  const auto od = deconv_out_dims({L, H, W}, g);
  std::vector<double> acc(static_cast<std::size_t>(O * od[0] * od[1] * od[2]));
  for (std::int64_t c = 0; c < C; ++c)
    for (std::int64_t l = 0; l < L; ++l)
      for (std::int64_t h = 0; h < H; ++h)
        for (std::int64_t v = 0; v < W; ++v)
          for (std::int64_t o = 0; o < O; ++o)
            for (std::int64_t kl = 0; kl < g.kernel[0]; ++kl)
              for (std::int64_t kh = 0; kh < g.kernel[1]; ++kh)
                for (std::int64_t kw = 0; kw < g.kernel[2]; ++kw) {
                  const std::int64_t ol = l * g.stride[0] - g.pad[0] + kl;
                  const std::int64_t oh = h * g.stride[1] - g.pad[1] + kh;
                  const std::int64_t ow = v * g.stride[2] - g.pad[2] + kw;
                  if (ol < 0 || oh < 0 || ow < 0 || ol >= od[0] || oh >= od[1] || ow >= od[2]) continue;
                  acc[static_cast<std::size_t>(((o * od[0] + ol) * od[1] + oh) * od[2] + ow)] +=
                      static_cast<double>(x(c, l, h, v)) * w(c, o, kl, kh, kw);
                }
  Tensor y(Shape{O, od[0], od[1], od[2]});
  const auto plane = static_cast<std::size_t>(od[0] * od[1] * od[2]);
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = static_cast<float>(acc[i] + b[i / plane]);
  return y;
}

void expect_close_rel(const Tensor& a, const Tensor& b, double rel) {
  ASSERT_EQ(a.shape(), b.shape());
  double scale = 0.0;
  for (float v : b.values()) scale = std::max(scale, std::abs(static_cast<double>(v)));
  for (std::size_t i = 0; i < a.size(); ++i)
    ASSERT_LE(std::abs(static_cast<double>(a[i]) - b[i]), rel * std::max(1.0, scale)) << "index " << i;
}

ConvGeometry random_geometry(std::mt19937_64& rng) {
  std::uniform_int_distribution<std::int64_t> k(1, 5), s(1, 3);
  ConvGeometry g;
  for (int a = 0; a < 3; ++a) {
    g.kernel[a] = k(rng);
    g.stride[a] = s(rng);
    g.pad[a] = std::uniform_int_distribution<std::int64_t>(0, g.kernel[a] - 1)(rng);
  }
  return g;
}

}  // namespace

TEST(Conv3d, IdentityKernel) {
  const Tensor x(Shape{1, 1, 3, 3}, 1.0f);
  const Tensor w(Shape{1, 1, 1, 1, 1}, 1.0f);
  EXPECT_EQ(conv3d_forward(x, w, Tensor(Shape{1}), ConvGeometry{}), x);
  const Tensor r = random_tensor(Shape{2, 3, 4, 5}, 1);
  Tensor eye(Shape{2, 2, 1, 1, 1});
  eye(0, 0, 0, 0, 0) = eye(1, 1, 0, 0, 0) = 1.0f;
  EXPECT_EQ(conv3d_forward(r, eye, Tensor(Shape{2}), ConvGeometry{}), r);
}

TEST(Conv3d, FullSizeOutputDims) {
  const auto d = conv_out_dims({16, 112, 112}, ConvGeometry::cube(3, 1, 1));
  EXPECT_EQ(d, (std::array<std::int64_t, 3>{16, 112, 112}));
}

TEST(Conv3d, MatchesNaiveOracle) {
  const auto g = ConvGeometry::cube(3, 2, 1);
  const Tensor x = random_tensor(Shape{2, 4, 5, 5}, 2);
  const Tensor w = random_tensor(Shape{3, 2, 3, 3, 3}, 3);
  const Tensor b = random_tensor(Shape{3}, 4);
  expect_close_rel(conv3d_forward(x, w, b, g), naive_conv(x, w, b, g), 1e-5);
}

TEST(Conv3d, MatchesNaiveOracleRandomGeometries) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const ConvGeometry g = random_geometry(rng);
    std::uniform_int_distribution<std::int64_t> c(1, 3), n(1, 7);
    const Shape xs{c(rng), n(rng), n(rng), n(rng)};
    bool fits = true;
    for (int a = 0; a < 3; ++a) fits &= conv_out_size(xs[1 + a], g.kernel[a], g.stride[a], g.pad[a]) >= 1;
    if (!fits) {
      EXPECT_V2V_ERROR(conv_out_dims({xs[1], xs[2], xs[3]}, g), ErrorCode::NonPositiveOutputShape);
      continue;
    }
    const Tensor x = random_tensor(xs, 100 + trial);
    const Tensor w = random_tensor(Shape{c(rng), xs[0], g.kernel[0], g.kernel[1], g.kernel[2]}, 200 + trial);
    const Tensor b = random_tensor(Shape{w.dim(0)}, 300 + trial);
    expect_close_rel(conv3d_forward(x, w, b, g), naive_conv(x, w, b, g), 1e-5);
  }
}

TEST(Conv3d, ZeroUpstreamGivesZeroGradients) {
  const Tensor x = random_tensor(Shape{2, 4, 5, 5}, 1);
  const Tensor w = random_tensor(Shape{3, 2, 3, 3, 3}, 2);
  const ConvGrads gr = conv3d_backward(x, w, ConvGeometry::cube(3, 2, 1), Tensor(Shape{3, 2, 3, 3}));
  for (const Tensor* t : {&gr.dx, &gr.dw, &gr.db})
    for (float v : t->values()) ASSERT_EQ(v, 0.0f);
}

TEST(Conv3d, BitDeterministic) {
  const Tensor x = random_tensor(Shape{3, 8, 12, 12}, 1);
  const Tensor w = random_tensor(Shape{4, 3, 3, 3, 3}, 2);
  const Tensor b = random_tensor(Shape{4}, 3);
  const auto g = ConvGeometry::cube(3, 1, 1);
  EXPECT_EQ(conv3d_forward(x, w, b, g), conv3d_forward(x, w, b, g));
  const Tensor dy = random_tensor(Shape{4, 8, 12, 12}, 4);
  const ConvGrads a = conv3d_backward(x, w, g, dy), c = conv3d_backward(x, w, g, dy);
  EXPECT_EQ(a.dx, c.dx);
  EXPECT_EQ(a.dw, c.dw);
  EXPECT_EQ(a.db, c.db);
}

TEST(Conv3d, RejectsChannelMismatch) {
  EXPECT_V2V_ERROR(conv3d_forward(Tensor(Shape{2, 3, 3, 3}), Tensor(Shape{1, 3, 1, 1, 1}), Tensor(Shape{1}), ConvGeometry{}),
                   ErrorCode::ChannelMismatch);
}

TEST(Deconv3d, SingleInputScatter) {
  const Tensor x(Shape{1, 1, 1, 1}, std::vector<float>{2.5f});
  const Tensor w(Shape{1, 1, 4, 4, 4}, 1.0f);
  const Tensor y = deconv3d_forward(x, w, Tensor(Shape{1}), ConvGeometry::cube(4, 2, 1));
  ASSERT_EQ(y.shape(), (Shape{1, 2, 2, 2}));
  for (float v : y.values()) EXPECT_EQ(v, 2.5f);
}

TEST(Deconv3d, LiftsSevenToFourteen) {
  EXPECT_EQ(deconv_out_size(7, 4, 2, 1), 14);
  const auto d = deconv_out_dims({2, 7, 7}, ConvGeometry::cube(4, 2, 1));
  EXPECT_EQ(d, (std::array<std::int64_t, 3>{4, 14, 14}));
}

TEST(Deconv3d, MatchesScatterOracleRandomGeometries) {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 50; ++trial) {
    const ConvGeometry g = random_geometry(rng);
    std::uniform_int_distribution<std::int64_t> c(1, 3), n(1, 5);
    const Shape xs{c(rng), n(rng), n(rng), n(rng)};
    bool fits = true;
    for (int a = 0; a < 3; ++a) fits &= deconv_out_size(xs[1 + a], g.kernel[a], g.stride[a], g.pad[a]) >= 1;
    if (!fits) continue;
    const Tensor x = random_tensor(xs, 100 + trial);
    const Tensor w = random_tensor(Shape{xs[0], c(rng), g.kernel[0], g.kernel[1], g.kernel[2]}, 200 + trial);
    const Tensor b = random_tensor(Shape{w.dim(1)}, 300 + trial);
    expect_close_rel(deconv3d_forward(x, w, b, g), naive_deconv(x, w, b, g), 1e-5);
  }
}

TEST(Deconv3d, UnitKernelIsChannelMix) {
  const Tensor x = random_tensor(Shape{2, 3, 4, 4}, 1);
  const Tensor w = random_tensor(Shape{2, 3, 1, 1, 1}, 2);
  const Tensor y = deconv3d_forward(x, w, Tensor(Shape{3}), ConvGeometry{});
  ASSERT_EQ(y.shape(), (Shape{3, 3, 4, 4}));
  const std::size_t V = 48;
  for (std::size_t o = 0; o < 3; ++o)
    for (std::size_t v = 0; v < V; ++v) {
      const double want = static_cast<double>(x[v]) * w(0, o, 0, 0, 0) + static_cast<double>(x[V + v]) * w(1, o, 0, 0, 0);
      ASSERT_NEAR(y[o * V + v], want, 1e-5);
    }
}

TEST(Deconv3d, InputGradientIsConvWithSameWeights) {
  const auto g = ConvGeometry::cube(4, 2, 1);
  const Tensor x = random_tensor(Shape{3, 2, 3, 3}, 1);
  const Tensor w = random_tensor(Shape{3, 2, 4, 4, 4}, 2);
  const Tensor dy = random_tensor(Shape{2, 4, 6, 6}, 3);
  const Tensor dx = deconv3d_backward(x, w, g, dy).dx;
  EXPECT_EQ(dx, conv3d_forward(dy, w, Tensor(Shape{3}), g));
}

TEST(Deconv3d, ZeroUpstreamGivesZeroGradients) {
  const Tensor x = random_tensor(Shape{2, 2, 2, 2}, 1);
  const Tensor w = random_tensor(Shape{2, 3, 4, 4, 4}, 2);
  const ConvGrads gr = deconv3d_backward(x, w, ConvGeometry::cube(4, 2, 1), Tensor(Shape{3, 4, 4, 4}));
  for (const Tensor* t : {&gr.dx, &gr.dw, &gr.db})
    for (float v : t->values()) ASSERT_EQ(v, 0.0f);
}

TEST(Adjoint, DeconvIsTransposeOfConv) {
  std::mt19937_64 rng(7);
  int checked = 0;
  while (checked < 100) {
    const ConvGeometry g = random_geometry(rng);
    std::uniform_int_distribution<std::int64_t> c(1, 3), n(1, 5);
    const Shape xs{c(rng), n(rng), n(rng), n(rng)};
    bool fits = true;
    for (int a = 0; a < 3; ++a) fits &= deconv_out_size(xs[1 + a], g.kernel[a], g.stride[a], g.pad[a]) >= 1;
    if (!fits) continue;
    const Tensor x = random_tensor(xs, 1000 + checked);
    const Tensor w = random_tensor(Shape{xs[0], c(rng), g.kernel[0], g.kernel[1], g.kernel[2]}, 2000 + checked);
    const Tensor up = deconv3d_forward(x, w, Tensor(Shape{w.dim(1)}), g);
    const Tensor z = random_tensor(up.shape(), 3000 + checked);
    const Tensor down = conv3d_forward(z, w, Tensor(Shape{w.dim(0)}), g);
    ASSERT_EQ(down.shape(), x.shape());
    const double lhs = dot(up, z), rhs = dot(x, down);
    EXPECT_LE(std::abs(lhs - rhs), 1e-4 * std::max(1.0, std::abs(lhs))) << "trial " << checked;
    ++checked;
  }
}

TEST(ShapeFormulas, HoldForRandomGeometries) {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 500; ++trial) {
    const ConvGeometry g = random_geometry(rng);
    std::array<std::int64_t, 3> in{};
    for (auto& v : in) v = std::uniform_int_distribution<std::int64_t>(1, 40)(rng);
    bool conv_ok = true, deconv_ok = true;
    std::array<std::int64_t, 3> cw{}, dw{};
    for (int a = 0; a < 3; ++a) {
      const auto span = in[a] + 2 * g.pad[a] - g.kernel[a];
      cw[a] = span < 0 ? 0 : span / g.stride[a] + 1;
      dw[a] = g.stride[a] * (in[a] - 1) + g.kernel[a] - 2 * g.pad[a];
      conv_ok &= cw[a] >= 1;
      deconv_ok &= dw[a] >= 1;
    }
    if (conv_ok) EXPECT_EQ(conv_out_dims(in, g), cw);
    else EXPECT_V2V_ERROR(conv_out_dims(in, g), ErrorCode::NonPositiveOutputShape);
    if (deconv_ok) EXPECT_EQ(deconv_out_dims(in, g), dw);
    else EXPECT_V2V_ERROR(deconv_out_dims(in, g), ErrorCode::NonPositiveOutputShape);
  }
}

TEST(MaxPool, SingleWindow) {
  const Tensor x(Shape{1, 1, 2, 2}, std::vector<float>{1, 2, 3, 4});
  const PoolResult r = maxpool3d_forward(x, Pool3dParams{{1, 2, 2}, {1, 2, 2}});
  ASSERT_EQ(r.y.shape(), (Shape{1, 1, 1, 1}));
  EXPECT_EQ(r.y[0], 4.0f);
  EXPECT_EQ(r.argmax[0], 3);
}

TEST(MaxPool, TiesGoToSmallestIndex) {
  const Tensor x(Shape{1, 2, 2, 2}, 7.0f);
  const PoolResult r = maxpool3d_forward(x, Pool3dParams{{2, 2, 2}, {2, 2, 2}});
  EXPECT_EQ(r.argmax[0], 0);
  const Tensor dx = maxpool3d_backward(r.argmax, Tensor(Shape{1, 1, 1, 1}, 1.0f), x.shape());
  EXPECT_EQ(dx[0], 1.0f);
  for (std::size_t i = 1; i < dx.size(); ++i) EXPECT_EQ(dx[i], 0.0f);
}

TEST(MaxPool, OverlappingWindowsAccumulate) {
  // Kernel 3 stride 1 along W: the middle maximum wins all three windows.
  const Tensor x(Shape{1, 1, 1, 5}, std::vector<float>{0, 1, 9, 1, 0});
  const PoolResult r = maxpool3d_forward(x, Pool3dParams{{1, 1, 3}, {1, 1, 1}});
  for (auto a : r.argmax) EXPECT_EQ(a, 2);
  const Tensor dx = maxpool3d_backward(r.argmax, Tensor(Shape{1, 1, 1, 3}, 1.0f), x.shape());
  EXPECT_EQ(dx[2], 3.0f);
}

TEST(MaxPool, ArgmaxInRange) {
  const Tensor x = random_tensor(Shape{3, 5, 7, 9}, 4);
  const PoolResult r = maxpool3d_forward(x, Pool3dParams{{2, 3, 2}, {1, 2, 3}});
  for (std::size_t i = 0; i < r.argmax.size(); ++i) {
    ASSERT_GE(r.argmax[i], 0);
    ASSERT_LT(r.argmax[i], static_cast<std::int64_t>(x.size()));
    ASSERT_EQ(x[static_cast<std::size_t>(r.argmax[i])], r.y[i]);
  }
}

TEST(MaxPool, EncoderTemporalChain) {
  std::array<std::int64_t, 3> d{16, 112, 112};
  d = pool_out_dims(d, {{1, 2, 2}, {1, 2, 2}});
  EXPECT_EQ(d, (std::array<std::int64_t, 3>{16, 56, 56}));
  const Pool3dParams p2{{2, 2, 2}, {2, 2, 2}};
  d = pool_out_dims(d, p2);
  EXPECT_EQ(d, (std::array<std::int64_t, 3>{8, 28, 28}));
  d = pool_out_dims(d, p2);
  EXPECT_EQ(d, (std::array<std::int64_t, 3>{4, 14, 14}));
  d = pool_out_dims(d, p2);
  EXPECT_EQ(d, (std::array<std::int64_t, 3>{2, 7, 7}));
}

TEST(Relu, ForwardAndBackward) {
  const Tensor x(Shape{3}, std::vector<float>{-1, 0, 2});
  EXPECT_EQ(relu_forward(x), Tensor(Shape{3}, std::vector<float>{0, 0, 2}));
  const Tensor dx = relu_backward(x, Tensor(Shape{3}, std::vector<float>{5, 5, 5}));
  EXPECT_EQ(dx, Tensor(Shape{3}, std::vector<float>{0, 0, 5}));
}

TEST(Concat, DecoderJoinShape) {
  const Tensor c = concat_channels(Tensor(Shape{256, 4, 14, 14}), Tensor(Shape{256, 4, 14, 14}));
  EXPECT_EQ(c.shape(), (Shape{512, 4, 14, 14}));
}

TEST(Concat, EqualHalvesAndSplit) {
  const Tensor a = random_tensor(Shape{2, 2, 3, 3}, 1);
  const Tensor c = concat_channels(a, a);
  const std::size_t half = a.size();
  for (std::size_t i = 0; i < half; ++i) ASSERT_EQ(c[i], c[half + i]);
  const auto [da, db] = concat_backward(c, 2);
  EXPECT_EQ(da, a);
  EXPECT_EQ(db, a);
  EXPECT_V2V_ERROR(concat_channels(a, Tensor(Shape{1, 2, 3, 4})), ErrorCode::SpatialMismatch);
}

TEST(Trilinear, ConstantStaysConstant) {
  const Tensor x(Shape{2, 2, 3, 3}, 0.75f);
  const Tensor y = trilinear_upsample(x, {5, 8, 11});
  ASSERT_EQ(y.shape(), (Shape{2, 5, 8, 11}));
  for (float v : y.values()) EXPECT_FLOAT_EQ(v, 0.75f);
}

TEST(Trilinear, RampHalfPixel) {
  const Tensor x(Shape{1, 1, 1, 2}, std::vector<float>{0, 1});
  const Tensor y = trilinear_upsample(x, {1, 1, 4});
  EXPECT_EQ(y, Tensor(Shape{1, 1, 1, 4}, std::vector<float>{0, 0.25f, 0.75f, 1}));
}

TEST(Trilinear, BaselineHeadShape) {
  const Tensor y = trilinear_upsample(Tensor(Shape{8, 2, 7, 7}), {16, 112, 112});
  EXPECT_EQ(y.shape(), (Shape{8, 16, 112, 112}));
}

TEST(Trilinear, BackwardIsAdjoint) {
  const Tensor x = random_tensor(Shape{2, 2, 3, 4}, 1);
  const Tensor y = trilinear_upsample(x, {5, 7, 9});
  const Tensor z = random_tensor(y.shape(), 2);
  const double lhs = dot(y, z), rhs = dot(x, trilinear_upsample_backward(z, x.shape()));
  EXPECT_NEAR(lhs, rhs, 1e-4 * std::abs(lhs));
}

// A linear op has no truncation error, so a large step keeps f32 rounding of
// the outputs small relative to the difference.
TEST(Gradcheck, LinearLayer) {
  const Tensor w = random_tensor(Shape{3, 2, 1, 1, 1}, 1);
  const Tensor x = random_tensor(Shape{2, 2, 3, 3}, 2);
  const float err = gradcheck([&](const Tensor& xi) { return conv3d_forward(xi, w, Tensor(Shape{3}), ConvGeometry{}); },
                              [&](const Tensor& xi, const Tensor& dy) { return conv3d_backward(xi, w, ConvGeometry{}, dy).dx; },
                              x, 0.25f);
  EXPECT_LT(err, 1e-4f);
}

TEST(Gradcheck, SingleOpsAgainstReference) {
  for (auto op : kCheckedOps) {
    if (op == "graph") continue;
    for (const auto& c : check_op_gradients(op, 7, 1e-3f)) {
      EXPECT_LT(c.report.max_rel_error, 1e-2) << op << " " << c.name;
      EXPECT_EQ(c.report.skipped, 0u) << op << " " << c.name;
      EXPECT_GT(c.report.probed, 0u) << op << " " << c.name;
    }
  }
}

TEST(Gradcheck, ComposedGraph) {
  const auto checks = check_op_gradients("graph", 7, 1e-3f, 2);
  EXPECT_GE(checks.size(), 20u);
  for (const auto& c : checks) {
    EXPECT_LT(c.report.max_rel_error, 1e-2) << c.name;
    EXPECT_GT(c.report.probed, 0u) << c.name;
  }
}

TEST(Gradcheck, UnknownOp) { EXPECT_V2V_ERROR(check_op_gradients("softmax", 1, 1e-3f), ErrorCode::InvalidConfig); }

TEST(Gradcheck, DetectsWrongGradient) {
  const Tensor x = random_tensor(Shape{2, 2, 2, 2}, 3);
  const float err = gradcheck([](const Tensor& xi) { return relu_forward(xi); },
                              [](const Tensor&, const Tensor& dy) { return dy; },  // ignores the mask
                              x, 1e-3f);
  EXPECT_GT(err, 0.5f);
}
