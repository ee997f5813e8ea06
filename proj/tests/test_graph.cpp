#include "test_util.hpp"
#include "v2v/v2v.hpp"

using namespace v2v;
using v2v::test::random_tensor;

namespace {

const Shape kFull{3, 16, 112, 112};

Shape grid(const NetGraph& g, std::string_view layer) {
  const Shape& s = g.layer(layer).out_shape;
  return Shape{s[1], s[2], s[3]};
}

}  // namespace

TEST(BuildV2V, FlowHeadFullSize) {
  const NetGraph g = build_v2v(TaskHead::flow(), kFull);
  EXPECT_EQ(g.output_shape(), (Shape{2, 16, 112, 112}));
  EXPECT_EQ(g.layer("conv5b").out_shape, (Shape{512, 2, 7, 7}));
}

TEST(BuildV2V, SegHeadFullSize) {
  EXPECT_EQ(build_v2v(TaskHead::segmentation(8), kFull).output_shape(), (Shape{8, 16, 112, 112}));
}

TEST(BuildV2V, ColorHeadTakesGray) {
  const NetGraph g = build_v2v(TaskHead::color(), Shape{1, 16, 112, 112});
  EXPECT_EQ(g.output_shape(), (Shape{3, 16, 112, 112}));
  EXPECT_EQ(g.params.at("conv1a.w").dim(1), 1);
}

TEST(BuildV2V, TinyWidth) {
  const NetGraph g = build_v2v(TaskHead::segmentation(5), Shape{3, 16, 64, 64}, 0.125);
  EXPECT_EQ(g.layer("deconv3").out_shape[0], 8);
  EXPECT_EQ(g.output_shape(), (Shape{5, 16, 64, 64}));
  const ChannelPlan p = ChannelPlan::scaled(0.125);
  EXPECT_EQ(p, (ChannelPlan{8, 16, 32, 64, 64, 32, 32, 16, 16, 8}));
}

TEST(BuildV2V, DecoderGridsMatchSkips) {
  const NetGraph g = build_v2v(TaskHead::flow(), kFull);
  EXPECT_EQ(grid(g, "deconv5"), (Shape{4, 14, 14}));
  EXPECT_EQ(grid(g, "deconv5"), grid(g, "conv4b"));
  EXPECT_EQ(grid(g, "deconv4"), (Shape{8, 28, 28}));
  EXPECT_EQ(grid(g, "deconv4"), grid(g, "conv3b"));
  EXPECT_EQ(grid(g, "deconv3"), (Shape{16, 112, 112}));
  EXPECT_EQ(g.layer("deconv3").geometry, (ConvGeometry{{4, 8, 8}, {2, 4, 4}, {1, 2, 2}}));
}

TEST(BuildV2V, OutputMatchesInputForAdmissibleShapes) {
  for (std::int64_t L : {16, 32})
    for (std::int64_t H : {16, 32, 48, 112})
      for (std::int64_t W : {16, 64}) {
        const NetGraph g = build_v2v(TaskHead::segmentation(4), Shape{3, L, H, W}, 0.125);
        EXPECT_EQ(g.output_shape(), (Shape{4, L, H, W}));
        for (const auto& l : g.layers)
          for (std::size_t a = 0; a < l.out_shape.rank(); ++a) EXPECT_GE(l.out_shape[a], 1);
      }
}

TEST(BuildV2V, RejectsIndivisibleInput) {
  EXPECT_V2V_ERROR(build_v2v(TaskHead::flow(), Shape{3, 12, 112, 112}), ErrorCode::IndivisibleInputShape);
  EXPECT_V2V_ERROR(build_v2v(TaskHead::flow(), Shape{3, 16, 100, 100}), ErrorCode::IndivisibleInputShape);
}

TEST(BuildV2V, ParamsExactlyForConvLayers) {
  const NetGraph g = build_v2v(TaskHead::segmentation(8), Shape{3, 16, 32, 32}, 0.125);
  std::size_t expected = 0;
  for (const auto& l : g.layers) {
    if (!has_params(l.kind)) {
      EXPECT_FALSE(g.params.contains(weight_name(l.name))) << l.name;
      continue;
    }
    expected += 2;
    ASSERT_TRUE(g.params.contains(weight_name(l.name))) << l.name;
    EXPECT_EQ(g.params.at(bias_name(l.name)).shape(), (Shape{l.out_channels}));
  }
  EXPECT_EQ(g.params.size(), expected);
}

TEST(BuildV2V, ReluEverywhereButPrediction) {
  const NetGraph g = build_v2v(TaskHead::flow(), kFull);
  for (const auto& l : g.layers) {
    if (!has_params(l.kind) || l.name == "conv_pre") continue;
    EXPECT_TRUE(g.has_layer(l.name + "_relu")) << l.name;
  }
  EXPECT_FALSE(g.has_layer("conv_pre_relu"));
  EXPECT_EQ(g.layers.back().name, "conv_pre");
}

TEST(Baselines, PredictionGrids) {
  const TaskHead seg = TaskHead::segmentation(8);
  const NetGraph c5 = build_baseline_up(BaselineLevel::Conv5b, seg, kFull);
  EXPECT_EQ(c5.layer("conv_pre").out_shape, (Shape{8, 2, 7, 7}));
  EXPECT_EQ(c5.output_shape(), (Shape{8, 16, 112, 112}));
  EXPECT_EQ(build_baseline_up(BaselineLevel::Conv3b, seg, kFull).layer("conv_pre").out_shape, (Shape{8, 8, 28, 28}));
  const NetGraph c4 = build_baseline_up(BaselineLevel::Conv4b, seg, kFull);
  EXPECT_EQ(c4.layer("conv_pre").out_shape, (Shape{8, 4, 14, 14}));
  EXPECT_EQ(c4.output_shape(), (Shape{8, 16, 112, 112}));
}

TEST(V2V2D, FramesAreIndependent) {
  NetGraph g = build_2d_v2v(TaskHead::segmentation(3), Shape{3, 4, 16, 16}, 0.125);
  init_params(g, 3);
  for (auto& [name, t] : g.params)
    if (name.ends_with(".b")) t = random_tensor(t.shape(), 9, 0.1f);
  const Tensor x = random_tensor(g.input_shape, 4);
  const std::array<std::int64_t, 4> perm{2, 0, 3, 1};
  Tensor xp(x.shape());
  for (std::int64_t c = 0; c < 3; ++c)
    for (std::int64_t t = 0; t < 4; ++t)
      std::copy_n(x.data() + x.offset(c, perm[static_cast<std::size_t>(t)], 0, 0), 256, xp.data() + xp.offset(c, t, 0, 0));
  const Tensor y = forward(g, x).prediction, yp = forward(g, xp).prediction;
  for (std::int64_t k = 0; k < 3; ++k)
    for (std::int64_t t = 0; t < 4; ++t)
      for (std::int64_t i = 0; i < 256; ++i)
        ASSERT_EQ(yp[yp.offset(k, t, 0, 0) + static_cast<std::size_t>(i)],
                  y[y.offset(k, perm[static_cast<std::size_t>(t)], 0, 0) + static_cast<std::size_t>(i)]);
}

TEST(V2V2D, SingleFrame) {
  const Shape one{3, 1, 112, 112};
  EXPECT_EQ(build_2d_v2v(TaskHead::segmentation(8), one, 0.125).output_shape(), (Shape{8, 1, 112, 112}));
  EXPECT_V2V_ERROR(build_v2v(TaskHead::segmentation(8), one, 0.125), ErrorCode::IndivisibleInputShape);
}

TEST(Forward, ZeroInputZeroBiases) {
  NetGraph g = build_v2v(TaskHead::flow(), Shape{3, 16, 16, 16}, 0.125);
  init_params(g, 1);
  for (float v : forward(g, Tensor(g.input_shape)).prediction.values()) ASSERT_EQ(v, 0.0f);
}

TEST(Forward, BitIdenticalReruns) {
  NetGraph g = build_v2v(TaskHead::segmentation(8), Shape{3, 16, 32, 32}, 0.125);
  init_params(g, 2);
  const Tensor x = random_tensor(g.input_shape, 5);
  const ForwardResult a = forward(g, x), b = forward(g, x);
  EXPECT_EQ(a.prediction, b.prediction);
  const Tensor dy = random_tensor(a.prediction.shape(), 6);
  const ParamMap ga = backward(g, a.cache, dy), gb = backward(g, b.cache, dy);
  for (const auto& [name, t] : ga) EXPECT_EQ(t, gb.at(name)) << name;
}

TEST(Forward, RejectsWrongInput) {
  const NetGraph g = build_v2v(TaskHead::flow(), Shape{3, 16, 16, 16}, 0.125);
  EXPECT_V2V_ERROR(forward(g, Tensor(Shape{3, 16, 32, 32})), ErrorCode::ShapeMismatch);
}

TEST(Backward, ZeroUpstream) {
  NetGraph g = build_v2v(TaskHead::flow(), Shape{3, 16, 16, 16}, 0.125);
  init_params(g, 2);
  const ForwardResult fr = forward(g, random_tensor(g.input_shape, 1));
  const ParamMap grads = backward(g, fr.cache, Tensor(fr.prediction.shape()));
  EXPECT_EQ(grads.size(), g.params.size());
  for (const auto& [name, t] : grads)
    for (float v : t.values()) ASSERT_EQ(v, 0.0f) << name;
}

TEST(Init, SameSeedSameParams) {
  NetGraph a = build_v2v(TaskHead::flow(), Shape{3, 16, 16, 16}, 0.125), b = a;
  init_params(a, 42);
  init_params(b, 42);
  for (const auto& [name, t] : a.params) EXPECT_EQ(t, b.params.at(name)) << name;
  init_params(b, 43);
  EXPECT_FALSE(a.params.at("conv1a.w") == b.params.at("conv1a.w"));
}

TEST(Init, TrilinearDeconvIsInterpolation) {
  // A deconv initialized as interpolation lifts a constant map to a constant
  // interior.
  NetGraph g = build_v2v(TaskHead::flow(), Shape{3, 16, 16, 16}, 0.125);
  init_params(g, 1, InitScheme::HeTrilinearDeconv);
  const Tensor& w = g.params.at("deconv4.w");
  const Tensor x(Shape{w.dim(0), 4, 4, 4}, 1.0f);
  const Tensor y = deconv3d_forward(x, w, Tensor(Shape{w.dim(1)}), g.layer("deconv4").geometry);
  EXPECT_NEAR(y(0, 3, 3, 3), y(0, 4, 4, 4), 1e-5);
  EXPECT_GT(y(0, 3, 3, 3), 0.0f);
}

TEST(InferModel, RecoversArchitectureAndPlan) {
  for (auto arch : {Architecture::V2V, Architecture::V2V2D, Architecture::Conv3bUp, Architecture::Conv4bUp,
                    Architecture::Conv5bUp}) {
    const NetGraph g = build_network(arch, TaskHead::segmentation(6), Shape{3, 16, 32, 32}, ChannelPlan::scaled(0.25));
    const InferredModel m = infer_model(g.params);
    EXPECT_EQ(m.architecture, arch) << to_string(arch);
    EXPECT_EQ(m.output_channels, 6);
    EXPECT_EQ(m.plan.conv1a, g.plan.conv1a);
  }
}

TEST(Architecture, NamesRoundTrip) {
  for (auto a : {Architecture::V2V, Architecture::V2V2D, Architecture::Conv3bUp, Architecture::Conv4bUp,
                 Architecture::Conv5bUp})
    EXPECT_EQ(parse_architecture(to_string(a)), a);
  EXPECT_V2V_ERROR(parse_architecture("resnet"), ErrorCode::InvalidConfig);
}
