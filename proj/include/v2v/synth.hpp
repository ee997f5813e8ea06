#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "v2v/dataset.hpp"
#include "v2v/tensor.hpp"
#include "v2v/tensor_io.hpp"

namespace v2v {

/// Rec.601 luma, [3,L,H,W] -> [1,L,H,W].
inline Tensor to_grayscale(const Tensor& clip) {
  if (clip.rank() != 4 || clip.dim(0) != 3)
    throw Error(ErrorCode::ShapeMismatch, "grayscale needs [3,L,H,W], got " + clip.shape().str());
  const std::size_t V = clip.size() / 3;
  Tensor out(Shape{1, clip.dim(1), clip.dim(2), clip.dim(3)});
  for (std::size_t i = 0; i < V; ++i) out[i] = 0.299f * clip[i] + 0.587f * clip[V + i] + 0.114f * clip[2 * V + i];
  return out;
}

enum class ObjectShape { Rect, Disk };

struct ObjectSpec {
  ObjectShape shape = ObjectShape::Rect;
  /// Top-left corner at frame 0, in pixels.
  double y = 0.0, x = 0.0;
  /// Bounding box; a disk is the ellipse inscribed in it.
  std::int64_t height = 8, width = 8;
  /// Pixels per frame along W and H.
  double vx = 0.0, vy = 0.0;
  int class_id = 1;
  std::array<float, 3> color{1.0f, 1.0f, 1.0f};
};

struct SceneSpec {
  std::int64_t height = 64, width = 64, frames = 16;
  int classes = 8;
  int background_class = 0;
  std::uint64_t texture_seed = 1;
  std::array<float, 3> background{0.5f, 0.5f, 0.5f};
  /// Texture feature size in pixels.
  double texture_cell = 6.0;
  /// Drawn back to front.
  std::vector<ObjectSpec> objects;
  float noise_std = 0.0f;
  /// Permits non-integer velocities and positions.
  bool subpixel = false;
};

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Smooth random field in [0,1): lattice values every `cell` pixels, bilinearly
// interpolated. Defined for any real coordinate.
struct ValueNoise {
  std::uint64_t seed;
  double cell = 4.0;

  float lattice(std::int64_t iy, std::int64_t ix) const {
    const auto h = splitmix64(seed ^ splitmix64(static_cast<std::uint64_t>(iy) * 0x100000001b3ULL +
                                                static_cast<std::uint64_t>(ix)));
    return static_cast<float>(h >> 40) / static_cast<float>(1ULL << 24);
  }
  float operator()(double y, double x) const {
    const double gy = y / cell, gx = x / cell;
    const auto iy = static_cast<std::int64_t>(std::floor(gy));
    const auto ix = static_cast<std::int64_t>(std::floor(gx));
    const auto fy = static_cast<float>(gy - static_cast<double>(iy));
    const auto fx = static_cast<float>(gx - static_cast<double>(ix));
    const float top = (1.0f - fx) * lattice(iy, ix) + fx * lattice(iy, ix + 1);
    const float bot = (1.0f - fx) * lattice(iy + 1, ix) + fx * lattice(iy + 1, ix + 1);
    return (1.0f - fy) * top + fy * bot;
  }
};

inline bool covers(const ObjectSpec& o, double ry, double rx) {
  const auto h = static_cast<double>(o.height), w = static_cast<double>(o.width);
  if (ry < 0.0 || rx < 0.0 || ry >= h || rx >= w) return false;
  if (o.shape == ObjectShape::Rect) return true;
  const double dy = (ry + 0.5 - h / 2) / (h / 2), dx = (rx + 0.5 - w / 2) / (w / 2);
  return dy * dy + dx * dx <= 1.0;
}

// Clamps one axis of the start position so the object stays inside
// [0, canvas) for every frame.
inline double clamp_axis(double p, double v, std::int64_t size, std::int64_t canvas, std::int64_t frames,
                         std::size_t index) {
  const double travel = v * static_cast<double>(frames - 1);
  const double lo = -std::min(0.0, travel);
  const double hi = static_cast<double>(canvas - size) - std::max(0.0, travel);
  if (lo > hi)
    throw Error(ErrorCode::ObjectOutOfCanvas, "object " + std::to_string(index) + " of size " + std::to_string(size) +
                                                  " moving " + std::to_string(v) + " px/frame cannot stay inside " +
                                                  std::to_string(canvas) + " px");
  return std::clamp(p, lo, hi);
}

inline bool is_integer(double v) { return std::floor(v) == v; }

}  // namespace detail

/// Deterministic render of `scene`; `seed` drives the sensor noise only.
inline ClipSample gen_clip(const SceneSpec& scene, std::uint64_t seed) {
  const std::int64_t L = scene.frames, H = scene.height, W = scene.width;
  if (L < 1 || H < 1 || W < 1) throw Error(ErrorCode::InvalidConfig, "scene needs positive frames and canvas");
  if (scene.classes < 1 || scene.classes > 255) throw Error(ErrorCode::InvalidConfig, "classes must be in [1,255]");
  if (scene.background_class < 0 || scene.background_class >= scene.classes)
    throw Error(ErrorCode::LabelOutOfRange, "background class " + std::to_string(scene.background_class));
  if (scene.noise_std < 0.0f) throw Error(ErrorCode::InvalidConfig, "noise stddev must be non-negative");

  std::vector<ObjectSpec> objs = scene.objects;
  for (std::size_t i = 0; i < objs.size(); ++i) {
    auto& o = objs[i];
    if (o.class_id < 0 || o.class_id >= scene.classes)
      throw Error(ErrorCode::LabelOutOfRange, "object " + std::to_string(i) + " class " + std::to_string(o.class_id));
    if (o.height < 1 || o.width < 1) throw Error(ErrorCode::InvalidConfig, "object size must be positive");
    if (std::max(std::abs(o.vx), std::abs(o.vy)) > 4.0) throw Error(ErrorCode::InvalidConfig, "object speed above 4 px/frame");
    for (float c : o.color)
      if (!(c >= 0.0f && c <= 1.0f)) throw Error(ErrorCode::InvalidConfig, "object color outside [0,1]");
    if (!scene.subpixel && !(detail::is_integer(o.vx) && detail::is_integer(o.vy) && detail::is_integer(o.x) &&
                            detail::is_integer(o.y)))
      throw Error(ErrorCode::InvalidConfig, "non-integer motion needs subpixel rendering");
    o.x = detail::clamp_axis(o.x, o.vx, o.width, W, L, i);
    o.y = detail::clamp_axis(o.y, o.vy, o.height, H, L, i);
  }

  ClipSample s{Tensor(Shape{3, L, H, W}), Tensor(Shape{2, L, H, W}), Tensor(Shape{L, H, W}, static_cast<float>(scene.background_class)),
               Tensor(), ""};
  const detail::ValueNoise bg{detail::splitmix64(scene.texture_seed), scene.texture_cell};
  std::vector<detail::ValueNoise> tex;
  for (std::size_t i = 0; i < objs.size(); ++i) tex.push_back({detail::splitmix64(scene.texture_seed + 1 + i), scene.texture_cell});

  const std::size_t V = static_cast<std::size_t>(L * H * W);
  for (std::int64_t y = 0; y < H; ++y)
    for (std::int64_t x = 0; x < W; ++x) {
      const float n = bg(static_cast<double>(y), static_cast<double>(x));
      for (std::int64_t t = 0; t < L; ++t) {
        const std::size_t v = static_cast<std::size_t>((t * H + y) * W + x);
        for (std::size_t c = 0; c < 3; ++c) s.clip[c * V + v] = scene.background[c] * (0.6f + 0.4f * n);
      }
    }
  for (std::int64_t t = 0; t < L; ++t)
    for (std::size_t i = 0; i < objs.size(); ++i) {
      const auto& o = objs[i];
      const double oy = o.y + o.vy * static_cast<double>(t);
      const double ox = o.x + o.vx * static_cast<double>(t);
      const auto y0 = std::max<std::int64_t>(0, static_cast<std::int64_t>(std::floor(oy)));
      const auto x0 = std::max<std::int64_t>(0, static_cast<std::int64_t>(std::floor(ox)));
      const auto y1 = std::min<std::int64_t>(H, static_cast<std::int64_t>(std::ceil(oy)) + o.height + 1);
      const auto x1 = std::min<std::int64_t>(W, static_cast<std::int64_t>(std::ceil(ox)) + o.width + 1);
      for (std::int64_t y = y0; y < y1; ++y)
        for (std::int64_t x = x0; x < x1; ++x) {
          const double ry = static_cast<double>(y) - oy, rx = static_cast<double>(x) - ox;
          if (!detail::covers(o, ry, rx)) continue;
          const float n = tex[i](ry, rx);
          const std::size_t v = static_cast<std::size_t>((t * H + y) * W + x);
          for (std::size_t c = 0; c < 3; ++c) s.clip[c * V + v] = o.color[c] * (0.55f + 0.45f * n);
          s.gt_flow[v] = static_cast<float>(o.vx);
          s.gt_flow[V + v] = static_cast<float>(o.vy);
          s.gt_seg[v] = static_cast<float>(o.class_id);
        }
    }
  s.gt_color = s.clip;
  if (scene.noise_std > 0.0f) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<float> normal(0.0f, scene.noise_std);
    for (auto& px : s.clip.values()) px = std::clamp(px + normal(rng), 0.0f, 1.0f);
  }
  return s;
}

/// Parameters for randomly drawn scenes.
struct DatasetTemplate {
  std::int64_t height = 64, width = 64, frames = 16;
  int classes = 8;
  int min_objects = 1, max_objects = 3;
  std::int64_t min_size = 10, max_size = 24;
  /// Integer speeds are drawn from [-max_speed, max_speed] per axis.
  int max_speed = 2;
  float noise_std = 0.01f;
  /// Class follows the motion direction (right, left, down, up) instead of
  /// the object color; every object then moves along one axis.
  bool label_by_motion = false;
};

/// Fixed per-class colors for objects; index 0 is unused by objects.
inline std::array<float, 3> class_color(int k) {
  static constexpr std::array<std::array<float, 3>, 8> kColors{{{0.5f, 0.5f, 0.5f},
                                                                {0.95f, 0.2f, 0.15f},
                                                                {0.2f, 0.85f, 0.25f},
                                                                {0.2f, 0.35f, 0.95f},
                                                                {0.95f, 0.9f, 0.2f},
                                                                {0.9f, 0.3f, 0.9f},
                                                                {0.2f, 0.9f, 0.9f},
                                                                {1.0f, 0.6f, 0.1f}}};
  return kColors[static_cast<std::size_t>(k) % kColors.size()];
}

inline SceneSpec random_scene(const DatasetTemplate& t, std::uint64_t seed) {
  if (t.classes < 2) throw Error(ErrorCode::InvalidConfig, "need at least 2 classes");
  if (t.label_by_motion && t.classes < 5) throw Error(ErrorCode::InvalidConfig, "motion labels need 5 classes");
  if (t.min_objects < 0 || t.max_objects < t.min_objects || t.min_size < 1 || t.max_size < t.min_size ||
      t.max_speed < 0 || t.max_speed > 4)
    throw Error(ErrorCode::InvalidConfig, "inconsistent dataset template");
  std::mt19937_64 rng(seed);
  auto uniform_int = [&](std::int64_t lo, std::int64_t hi) { return std::uniform_int_distribution<std::int64_t>(lo, hi)(rng); };
  SceneSpec s;
  s.height = t.height;
  s.width = t.width;
  s.frames = t.frames;
  s.classes = t.classes;
  s.noise_std = t.noise_std;
  s.texture_seed = rng();
  const int n = static_cast<int>(uniform_int(t.min_objects, t.max_objects));
  for (int i = 0; i < n; ++i) {
    ObjectSpec o;
    o.shape = uniform_int(0, 1) ? ObjectShape::Disk : ObjectShape::Rect;
    o.height = uniform_int(t.min_size, t.max_size);
    o.width = uniform_int(t.min_size, t.max_size);
    if (t.label_by_motion) {
      const int dir = static_cast<int>(uniform_int(0, 3));
      const auto speed = static_cast<double>(uniform_int(std::min(1, t.max_speed), t.max_speed));
      o.vx = dir == 0 ? speed : dir == 1 ? -speed : 0.0;
      o.vy = dir == 2 ? speed : dir == 3 ? -speed : 0.0;
      o.class_id = 1 + dir;
      o.color = class_color(1 + static_cast<int>(uniform_int(0, 6)));
    } else {
      o.vx = static_cast<double>(uniform_int(-t.max_speed, t.max_speed));
      o.vy = static_cast<double>(uniform_int(-t.max_speed, t.max_speed));
      o.class_id = static_cast<int>(uniform_int(1, t.classes - 1));
      o.color = class_color(o.class_id);
    }
    const auto travel_x = static_cast<std::int64_t>(std::abs(o.vx)) * (t.frames - 1);
    const auto travel_y = static_cast<std::int64_t>(std::abs(o.vy)) * (t.frames - 1);
    o.width = std::min(o.width, std::max<std::int64_t>(1, t.width - travel_x));
    o.height = std::min(o.height, std::max<std::int64_t>(1, t.height - travel_y));
    o.x = static_cast<double>(uniform_int(0, std::max<std::int64_t>(0, t.width - o.width)));
    o.y = static_cast<double>(uniform_int(0, std::max<std::int64_t>(0, t.height - o.height)));
    // Slow down objects whose path cannot fit the canvas.
    while (o.width + std::abs(static_cast<std::int64_t>(o.vx)) * (t.frames - 1) > t.width) o.vx -= o.vx > 0 ? 1 : -1;
    while (o.height + std::abs(static_cast<std::int64_t>(o.vy)) * (t.frames - 1) > t.height) o.vy -= o.vy > 0 ? 1 : -1;
    s.objects.push_back(o);
  }
  return s;
}

inline std::string sample_id(std::uint64_t seed, int index) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "s%llu_%05d", static_cast<unsigned long long>(seed), index);
  return buf;
}

/// Writes n random samples as TensorFiles plus `manifest.tsv` into out_dir and
/// returns the manifest path. Ids embed the seed, so datasets made with
/// different seeds never collide.
inline std::filesystem::path make_dataset(int n, const DatasetTemplate& tmpl, std::uint64_t seed,
                                          const std::filesystem::path& out_dir) {
  if (n < 0) throw Error(ErrorCode::InvalidConfig, "sample count must be non-negative");
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw Error(ErrorCode::Io, "cannot create " + out_dir.string() + ": " + ec.message());
  std::vector<ManifestEntry> entries;
  for (int i = 0; i < n; ++i) {
    const std::uint64_t s = detail::splitmix64(seed * 0x9e3779b97f4a7c15ULL + static_cast<std::uint64_t>(i));
    ClipSample c = gen_clip(random_scene(tmpl, s), s ^ 0xa5a5a5a5ULL);
    const std::string id = sample_id(seed, i);
    ManifestEntry e{id, out_dir / (id + ".clip.tensor"), out_dir / (id + ".flow.tensor"),
                    out_dir / (id + ".seg.tensor"), out_dir / (id + ".color.tensor")};
    tensor_write(c.clip, e.clip);
    tensor_write(c.gt_flow, e.flow);
    tensor_write(c.gt_seg, e.seg);
    tensor_write(c.gt_color, e.color);
    entries.push_back(std::move(e));
  }
  const auto path = out_dir / "manifest.tsv";
  write_manifest(path, entries);
  return path;
}

}  // namespace v2v
