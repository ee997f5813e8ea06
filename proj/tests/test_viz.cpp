#include "test_util.hpp"
#include "v2v/v2v.hpp"

using namespace v2v;
using v2v::test::random_tensor;
using v2v::test::TempDir;

using Rgb = std::array<std::uint8_t, 3>;

TEST(RenderFlow, ZeroFlowIsWhite) {
  const PpmImage img = render_flow(Tensor(Shape{2, 3, 5, 7}), 1);
  EXPECT_EQ(img.width, 7);
  EXPECT_EQ(img.height, 5);
  for (std::int64_t y = 0; y < 5; ++y)
    for (std::int64_t x = 0; x < 7; ++x) ASSERT_EQ(img.at(x, y), (Rgb{255, 255, 255}));
}

TEST(RenderFlow, HueFollowsDirection) {
  Tensor f(Shape{2, 1, 1, 4});
  f(0, 0, 0, 0) = 3.0f;   // right: red
  f(1, 0, 0, 1) = 3.0f;   // down: 90 degrees
  f(0, 0, 0, 2) = -3.0f;  // left: cyan
  f(0, 0, 0, 3) = 1.5f;   // half magnitude: pale red
  const PpmImage img = render_flow(f, 0, 3.0);
  EXPECT_EQ(img.at(0, 0), (Rgb{255, 0, 0}));
  EXPECT_EQ(img.at(1, 0), (Rgb{128, 255, 0}));
  EXPECT_EQ(img.at(2, 0), (Rgb{0, 255, 255}));
  EXPECT_EQ(img.at(3, 0), (Rgb{255, 128, 128}));
  EXPECT_EQ(render_flow(f, 0).at(0, 0), (Rgb{255, 0, 0}));
  EXPECT_DOUBLE_EQ(flow_hue(0.0, -1.0), 270.0);
}

TEST(RenderFlow, RejectsBadInput) {
  EXPECT_V2V_ERROR(render_flow(Tensor(Shape{3, 1, 2, 2}), 0), ErrorCode::ShapeMismatch);
  EXPECT_V2V_ERROR(render_flow(Tensor(Shape{2, 1, 2, 2}), 1), ErrorCode::ShapeMismatch);
}

TEST(RenderSeg, ArgmaxPalette) {
  Tensor logits(Shape{4, 2, 2, 2});
  logits(0, 1, 0, 0) = 1.0f;
  logits(2, 1, 0, 1) = 1.0f;
  logits(3, 1, 1, 0) = 1.0f;
  const PpmImage img = render_seg(logits, 1);
  EXPECT_EQ(img.at(0, 0), palette_color(0));
  EXPECT_EQ(img.at(1, 0), palette_color(2));
  EXPECT_EQ(img.at(0, 1), palette_color(3));
  EXPECT_EQ(img.at(1, 1), palette_color(0));
}

TEST(RenderSeg, HeatMap) {
  Tensor logits(Shape{2, 1, 1, 2});
  logits(1, 0, 0, 0) = 40.0f;
  logits(0, 0, 0, 1) = 40.0f;
  const PpmImage img = render_seg(logits, 0, 1);
  EXPECT_EQ(img.at(0, 0), (Rgb{255, 255, 255}));
  EXPECT_EQ(img.at(1, 0), (Rgb{0, 0, 0}));
  EXPECT_EQ(heat_color(1.0 / 3.0), (Rgb{255, 0, 0}));
  EXPECT_V2V_ERROR(render_seg(logits, 0, 2), ErrorCode::LabelOutOfRange);
}

TEST(RenderFilters, FirstLayerGrid) {
  const Tensor w = random_tensor(Shape{64, 3, 3, 3, 3}, 1);
  const FilterGridLayout lay = filter_grid_layout(w.shape());
  const PpmImage img = render_filters(w);
  EXPECT_EQ(lay.rows(), 16);
  EXPECT_EQ(img.width, lay.width());
  EXPECT_EQ(img.height, lay.height());
  EXPECT_EQ(img.width, 4 * (3 * 32 + 2));
  EXPECT_EQ(img.height, 16 * 32 + 2);
  // Each filter's extremes map to 0 and 255 somewhere in its tiles.
  for (std::int64_t f : {0, 37, 63}) {
    int lo = 255, hi = 0;
    for (std::int64_t t = 0; t < 3; ++t) {
      const auto [ox, oy] = lay.tile_origin(f, t);
      for (std::int64_t y = 0; y < 30; ++y)
        for (std::int64_t x = 0; x < 30; ++x)
          for (auto c : img.at(ox + x, oy + y)) {
            lo = std::min<int>(lo, c);
            hi = std::max<int>(hi, c);
          }
    }
    EXPECT_EQ(lo, 0) << f;
    EXPECT_EQ(hi, 255) << f;
  }
}

TEST(RenderFilters, ConstantFilterIsMidGray) {
  const Tensor w(Shape{2, 5, 1, 2, 2}, 0.7f);
  const PpmImage img = render_filters(w, 3);
  const auto [ox, oy] = filter_grid_layout(w.shape(), 3).tile_origin(1, 0);
  EXPECT_EQ(img.at(ox, oy), (Rgb{128, 128, 128}));
  EXPECT_EQ(img.at(0, 0), (Rgb{255, 255, 255}));
  EXPECT_V2V_ERROR(render_filters(Tensor(Shape{2, 3, 3, 3})), ErrorCode::ShapeMismatch);
}

TEST(Ppm, EncodeDecodeRoundTrip) {
  PpmImage img(3, 2);
  img.set(2, 1, {1, 2, 3});
  img.set(0, 0, {10, 32, 255});
  const auto bytes = encode_ppm(img);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 11), "P6\n3 2\n255\n");
  EXPECT_EQ(bytes.size(), 11u + 18u);
  const PpmImage back = decode_ppm(bytes);
  EXPECT_EQ(back.width, 3);
  EXPECT_EQ(back.rgb, img.rgb);
  TempDir dir;
  write_ppm(img, dir / "x.ppm");
  EXPECT_EQ(read_ppm(dir / "x.ppm").rgb, img.rgb);
}

TEST(Ppm, RejectsMalformed) {
  const auto good = encode_ppm(PpmImage(2, 2));
  auto bad = good;
  bad[1] = '3';
  EXPECT_V2V_ERROR(decode_ppm(bad), ErrorCode::BadMagic);
  auto short_ = good;
  short_.pop_back();
  EXPECT_V2V_ERROR(decode_ppm(short_), ErrorCode::TruncatedPayload);
  auto long_ = good;
  long_.push_back(0);
  EXPECT_V2V_ERROR(decode_ppm(long_), ErrorCode::DimsPayloadMismatch);
}

TEST(RenderFlow, OppositeFlowsAreHalfTurnApart) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n(0.0, 2.0);
  for (int i = 0; i < 200; ++i) {
    const double u = n(rng), v = n(rng);
    if (std::hypot(u, v) < 1e-6) continue;
    const double d = std::fmod(flow_hue(u, v) - flow_hue(-u, -v) + 360.0, 360.0);
    EXPECT_NEAR(d, 180.0, 1e-9) << u << ' ' << v;
  }
}
