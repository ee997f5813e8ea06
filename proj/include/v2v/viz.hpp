#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include "v2v/tensor.hpp"
#include "v2v/tensor_io.hpp"

namespace v2v {

/// 8-bit RGB raster serialized as binary PPM (P6).
struct PpmImage {
  std::int64_t width = 0, height = 0;
  std::vector<std::uint8_t> rgb;

  PpmImage() = default;
  PpmImage(std::int64_t w, std::int64_t h, std::array<std::uint8_t, 3> fill = {0, 0, 0})
      : width(w), height(h), rgb(static_cast<std::size_t>(3 * w * h)) {
    for (std::size_t i = 0; i < rgb.size(); i += 3) std::copy(fill.begin(), fill.end(), rgb.begin() + static_cast<std::ptrdiff_t>(i));
  }

  std::array<std::uint8_t, 3> at(std::int64_t x, std::int64_t y) const {
    const auto i = static_cast<std::size_t>(3 * (y * width + x));
    return {rgb[i], rgb[i + 1], rgb[i + 2]};
  }
  void set(std::int64_t x, std::int64_t y, std::array<std::uint8_t, 3> c) {
    const auto i = static_cast<std::size_t>(3 * (y * width + x));
    std::copy(c.begin(), c.end(), rgb.begin() + static_cast<std::ptrdiff_t>(i));
  }
};

inline std::vector<char> encode_ppm(const PpmImage& img) {
  const std::string header = "P6\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
  std::vector<char> out(header.begin(), header.end());
  out.insert(out.end(), img.rgb.begin(), img.rgb.end());
  return out;
}

inline PpmImage decode_ppm(const std::vector<char>& bytes) {
  std::size_t pos = 0;
  auto bad = [](const std::string& why) { return Error(ErrorCode::BadMagic, "not a binary PPM: " + why); };
  auto token = [&]() {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
        ++pos;
      } else {
        break;
      }
    }
    std::string t;
    while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos]))) t += bytes[pos++];
    return t;
  };
  if (token() != "P6") throw bad("magic");
  auto number = [&]() {
    const std::string t = token();
    if (t.empty() || t.size() > 9 || !std::all_of(t.begin(), t.end(), [](char c) { return c >= '0' && c <= '9'; }))
      throw Error(ErrorCode::BadMagic, "not a binary PPM: bad header field '" + t + "'");
    return std::stoll(t);
  };
  PpmImage img;
  img.width = number();
  img.height = number();
  if (number() != 255) throw bad("maxval must be 255");
  ++pos;  // single whitespace before the payload
  const auto n = static_cast<std::size_t>(3 * img.width * img.height);
  if (img.width < 1 || img.height < 1) throw bad("empty raster");
  if (bytes.size() < pos + n) throw Error(ErrorCode::TruncatedPayload, "PPM payload too short");
  if (bytes.size() > pos + n) throw Error(ErrorCode::DimsPayloadMismatch, "PPM has trailing bytes");
  img.rgb.assign(bytes.begin() + static_cast<std::ptrdiff_t>(pos), bytes.end());
  return img;
}

inline void write_ppm(const PpmImage& img, const std::filesystem::path& path) { detail::write_file(path, encode_ppm(img)); }
inline PpmImage read_ppm(const std::filesystem::path& path) { return decode_ppm(detail::read_file(path)); }

namespace detail {

inline std::uint8_t to_byte(double v) { return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)); }

// Hue in degrees [0,360), saturation and value in [0,1].
inline std::array<std::uint8_t, 3> hsv_to_rgb(double hue, double sat, double val) {
  hue = std::fmod(hue, 360.0);
  if (hue < 0.0) hue += 360.0;
  const double c = val * sat;
  const double hp = hue / 60.0;
  const double x = c * (1.0 - std::abs(std::fmod(hp, 2.0) - 1.0));
  double r = 0, g = 0, b = 0;
  switch (static_cast<int>(hp)) {
    case 0: r = c, g = x; break;
    case 1: r = x, g = c; break;
    case 2: g = c, b = x; break;
    case 3: g = x, b = c; break;
    case 4: r = x, b = c; break;
    default: r = c, b = x; break;
  }
  const double m = val - c;
  return {to_byte(r + m), to_byte(g + m), to_byte(b + m)};
}

inline void require_frame(const Tensor& t, std::int64_t frame, const char* what) {
  if (t.rank() != 4) throw Error(ErrorCode::ShapeMismatch, std::string(what) + " must be [K,L,H,W], got " + t.shape().str());
  if (frame < 0 || frame >= t.dim(1))
    throw Error(ErrorCode::ShapeMismatch, "frame " + std::to_string(frame) + " outside " + t.shape().str());
}

}  // namespace detail

/// Hue of a flow vector in degrees, atan2(v, u) mapped to [0,360).
inline double flow_hue(double u, double v) {
  double h = std::atan2(v, u) * 180.0 / std::numbers::pi;
  return h < 0.0 ? h + 360.0 : h;
}

/// Color-wheel rendering of frame t of a [2,L,H,W] flow. Saturation is the
/// magnitude over max_flow, or over the frame's largest magnitude when
/// max_flow <= 0. Zero flow is white.
inline PpmImage render_flow(const Tensor& flow, std::int64_t frame, double max_flow = 0.0) {
  detail::require_frame(flow, frame, "flow");
  if (flow.dim(0) != 2) throw Error(ErrorCode::ShapeMismatch, "flow must have 2 channels");
  const std::int64_t H = flow.dim(2), W = flow.dim(3);
  double cap = max_flow;
  if (cap <= 0.0)
    for (std::int64_t y = 0; y < H; ++y)
      for (std::int64_t x = 0; x < W; ++x) cap = std::max(cap, std::hypot(static_cast<double>(flow(0, frame, y, x)), static_cast<double>(flow(1, frame, y, x))));
  PpmImage img(W, H);
  for (std::int64_t y = 0; y < H; ++y)
    for (std::int64_t x = 0; x < W; ++x) {
      const double u = flow(0, frame, y, x), v = flow(1, frame, y, x);
      const double mag = std::hypot(u, v);
      const double sat = cap > 0.0 ? std::min(1.0, mag / cap) : 0.0;
      img.set(x, y, detail::hsv_to_rgb(flow_hue(u, v), sat, 1.0));
    }
  return img;
}

inline std::array<std::uint8_t, 3> palette_color(std::int64_t k) {
  static constexpr std::array<std::array<std::uint8_t, 3>, 8> kPalette{{{0, 0, 0},
                                                                        {230, 25, 75},
                                                                        {60, 180, 75},
                                                                        {0, 130, 200},
                                                                        {255, 225, 25},
                                                                        {145, 30, 180},
                                                                        {70, 240, 240},
                                                                        {245, 130, 48}}};
  return kPalette[static_cast<std::size_t>(k) % kPalette.size()];
}

/// "Hot" colormap: black, red, yellow, white as p goes 0 -> 1.
inline std::array<std::uint8_t, 3> heat_color(double p) {
  p = std::clamp(p, 0.0, 1.0);
  return {detail::to_byte(3.0 * p), detail::to_byte(3.0 * p - 1.0), detail::to_byte(3.0 * p - 2.0)};
}

/// Argmax labels of frame t from [K,L,H,W] logits in the fixed palette, or the
/// softmax probability of `heat_class` when it is >= 0.
inline PpmImage render_seg(const Tensor& logits, std::int64_t frame, std::int64_t heat_class = -1) {
  detail::require_frame(logits, frame, "logits");
  const std::int64_t K = logits.dim(0), H = logits.dim(2), W = logits.dim(3);
  if (heat_class >= K) throw Error(ErrorCode::LabelOutOfRange, "class " + std::to_string(heat_class) + " of " + std::to_string(K));
  PpmImage img(W, H);
  for (std::int64_t y = 0; y < H; ++y)
    for (std::int64_t x = 0; x < W; ++x) {
      std::int64_t best = 0;
      double m = logits(0, frame, y, x);
      for (std::int64_t k = 1; k < K; ++k)
        if (logits(k, frame, y, x) > m) {
          m = logits(k, frame, y, x);
          best = k;
        }
      if (heat_class < 0) {
        img.set(x, y, palette_color(best));
        continue;
      }
      double z = 0.0;
      for (std::int64_t k = 0; k < K; ++k) z += std::exp(static_cast<double>(logits(k, frame, y, x)) - m);
      img.set(x, y, heat_color(std::exp(static_cast<double>(logits(heat_class, frame, y, x)) - m) / z));
    }
  return img;
}

/// Geometry of the filter grid: each filter is a row segment of kL tiles.
struct FilterGridLayout {
  std::int64_t filters = 0, tiles_per_filter = 0, filters_per_row = 0;
  std::int64_t tile_w = 0, tile_h = 0, gap = 0;

  std::int64_t rows() const { return (filters + filters_per_row - 1) / filters_per_row; }
  std::int64_t filter_w() const { return tiles_per_filter * (tile_w + gap) + gap; }
  std::int64_t width() const { return filters_per_row * filter_w(); }
  std::int64_t height() const { return rows() * (tile_h + gap) + gap; }
  /// Top-left pixel of tile `t` of filter `f`.
  std::pair<std::int64_t, std::int64_t> tile_origin(std::int64_t f, std::int64_t t) const {
    return {(f % filters_per_row) * filter_w() + gap + t * (tile_w + gap), (f / filters_per_row) * (tile_h + gap) + gap};
  }
};

inline FilterGridLayout filter_grid_layout(const Shape& w, std::int64_t scale = 10, std::int64_t filters_per_row = 4) {
  if (w.rank() != 5) throw Error(ErrorCode::ShapeMismatch, "filter grid needs [out,in,kL,kH,kW] weights, got " + w.str());
  return {w[0], w[2], std::min(filters_per_row, w[0]), w[4] * scale, w[3] * scale, 2};
}

/// Conv weights [out,in,kL,kH,kW] as a grid: the kL temporal slices of each
/// filter sit side by side, min-max normalized per filter and enlarged by
/// `scale` with nearest-neighbor. Three input channels render as RGB, any
/// other count as the channel mean in gray. A constant filter is mid-gray.
inline PpmImage render_filters(const Tensor& w, std::int64_t scale = 10, std::int64_t filters_per_row = 4) {
  const FilterGridLayout lay = filter_grid_layout(w.shape(), scale, filters_per_row);
  const std::int64_t O = w.dim(0), I = w.dim(1), KL = w.dim(2), KH = w.dim(3), KW = w.dim(4);
  PpmImage img(lay.width(), lay.height(), {255, 255, 255});
  for (std::int64_t o = 0; o < O; ++o) {
    // Per-voxel channel values to display, then the filter's value range.
    const std::int64_t shown = I == 3 ? 3 : 1;
    std::vector<double> vals(static_cast<std::size_t>(shown * KL * KH * KW));
    for (std::int64_t c = 0; c < shown; ++c)
      for (std::int64_t l = 0; l < KL; ++l)
        for (std::int64_t h = 0; h < KH; ++h)
          for (std::int64_t x = 0; x < KW; ++x) {
            double v = 0.0;
            if (I == 3) {
              v = w(o, c, l, h, x);
            } else {
              for (std::int64_t i = 0; i < I; ++i) v += w(o, i, l, h, x);
              v /= static_cast<double>(I);
            }
            vals[static_cast<std::size_t>(((c * KL + l) * KH + h) * KW + x)] = v;
          }
    const auto [mn, mx] = std::minmax_element(vals.begin(), vals.end());
    const double lo = *mn, range = *mx - *mn;
    auto norm = [&](double v) -> std::uint8_t {
      if (!(range > 0.0)) return 128;
      return detail::to_byte((v - lo) / range);
    };
    for (std::int64_t l = 0; l < KL; ++l) {
      const auto [ox, oy] = lay.tile_origin(o, l);
      for (std::int64_t h = 0; h < KH; ++h)
        for (std::int64_t x = 0; x < KW; ++x) {
          std::array<std::uint8_t, 3> px{};
          for (std::int64_t c = 0; c < 3; ++c)
            px[static_cast<std::size_t>(c)] = norm(vals[static_cast<std::size_t>((((shown == 3 ? c : 0) * KL + l) * KH + h) * KW + x)]);
          for (std::int64_t dy = 0; dy < scale; ++dy)
            for (std::int64_t dx = 0; dx < scale; ++dx) img.set(ox + x * scale + dx, oy + h * scale + dy, px);
        }
    }
  }
  return img;
}

}  // namespace v2v
