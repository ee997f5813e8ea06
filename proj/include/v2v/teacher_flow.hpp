#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "v2v/synth.hpp"
#include "v2v/tensor.hpp"

namespace v2v {

struct HSParams {
  /// Regularizer weight lambda.
  float smoothness = 0.3f;
  int iterations = 100;
  int pyramid_levels = 1;

  void validate() const {
    if (!(smoothness > 0.0f)) throw Error(ErrorCode::InvalidConfig, "smoothness must be positive");
    if (iterations < 1) throw Error(ErrorCode::InvalidConfig, "iterations must be >= 1");
    if (pyramid_levels < 1) throw Error(ErrorCode::InvalidConfig, "pyramid_levels must be >= 1");
  }
};

/// Displacement in pixels per frame: u along W, v along H.
struct FlowField {
  Tensor u;
  Tensor v;
};

namespace detail {

struct Plane {
  std::int64_t h = 0, w = 0;
  std::vector<float> px;

  Plane() = default;
  Plane(std::int64_t h_, std::int64_t w_, float fill = 0.0f) : h(h_), w(w_), px(static_cast<std::size_t>(h_ * w_), fill) {}
  explicit Plane(const Tensor& t) : h(t.dim(0)), w(t.dim(1)), px(t.values().begin(), t.values().end()) {}

  float at(std::int64_t y, std::int64_t x) const {
    y = std::clamp<std::int64_t>(y, 0, h - 1);
    x = std::clamp<std::int64_t>(x, 0, w - 1);
    return px[static_cast<std::size_t>(y * w + x)];
  }
  float& operator()(std::int64_t y, std::int64_t x) { return px[static_cast<std::size_t>(y * w + x)]; }
  float operator()(std::int64_t y, std::int64_t x) const { return px[static_cast<std::size_t>(y * w + x)]; }

  /// Bilinear lookup with replicated borders.
  float sample(double y, double x) const {
    y = std::clamp(y, 0.0, static_cast<double>(h - 1));
    x = std::clamp(x, 0.0, static_cast<double>(w - 1));
    const auto y0 = static_cast<std::int64_t>(std::floor(y));
    const auto x0 = static_cast<std::int64_t>(std::floor(x));
    const auto fy = static_cast<float>(y - static_cast<double>(y0));
    const auto fx = static_cast<float>(x - static_cast<double>(x0));
    const float top = (1.0f - fx) * at(y0, x0) + fx * at(y0, x0 + 1);
    const float bot = (1.0f - fx) * at(y0 + 1, x0) + fx * at(y0 + 1, x0 + 1);
    return (1.0f - fy) * top + fy * bot;
  }

  Tensor tensor() const { return Tensor(Shape{h, w}, px); }
};

// 2x2 box average; odd trailing rows/columns fold into the last cell.
inline Plane half(const Plane& p) {
  Plane out(std::max<std::int64_t>(1, p.h / 2), std::max<std::int64_t>(1, p.w / 2));
  for (std::int64_t y = 0; y < out.h; ++y)
    for (std::int64_t x = 0; x < out.w; ++x)
      out(y, x) = 0.25f * (p.at(2 * y, 2 * x) + p.at(2 * y, 2 * x + 1) + p.at(2 * y + 1, 2 * x) + p.at(2 * y + 1, 2 * x + 1));
  return out;
}

// Resamples a flow component to (h, w), scaling its values by the size ratio.
inline Plane resize_flow(const Plane& p, std::int64_t h, std::int64_t w, double value_scale) {
  Plane out(h, w);
  const double sy = static_cast<double>(p.h) / static_cast<double>(h);
  const double sx = static_cast<double>(p.w) / static_cast<double>(w);
  for (std::int64_t y = 0; y < h; ++y)
    for (std::int64_t x = 0; x < w; ++x)
      out(y, x) = static_cast<float>(value_scale * p.sample((static_cast<double>(y) + 0.5) * sy - 0.5,
                                                            (static_cast<double>(x) + 0.5) * sx - 0.5));
  return out;
}

inline float neighbor_mean(const Plane& p, std::int64_t y, std::int64_t x) {
  return 0.25f * (p.at(y - 1, x) + p.at(y + 1, x) + p.at(y, x - 1) + p.at(y, x + 1));
}

struct Derivatives {
  Plane ix, iy, it;
};

// Spatial central differences averaged over both frames; It = b - a.
inline Derivatives derivatives(const Plane& a, const Plane& b) {
  Derivatives d{Plane(a.h, a.w), Plane(a.h, a.w), Plane(a.h, a.w)};
  for (std::int64_t y = 0; y < a.h; ++y)
    for (std::int64_t x = 0; x < a.w; ++x) {
      d.ix(y, x) = 0.25f * ((a.at(y, x + 1) - a.at(y, x - 1)) + (b.at(y, x + 1) - b.at(y, x - 1)));
      d.iy(y, x) = 0.25f * ((a.at(y + 1, x) - a.at(y - 1, x)) + (b.at(y + 1, x) - b.at(y - 1, x)));
      d.it(y, x) = b.at(y, x) - a.at(y, x);
    }
  return d;
}

// Jacobi iterations on one level. (u0, v0) is the flow b was warped by, so the
// linearized constraint is Ix (u - u0) + Iy (v - v0) + It = 0.
inline void hs_level(const Plane& a, const Plane& b_warped, Plane& u, Plane& v, const HSParams& p) {
  const Plane u0 = u, v0 = v;
  const Derivatives d = derivatives(a, b_warped);
  const float lam2 = p.smoothness * p.smoothness;
  Plane nu(u.h, u.w), nv(u.h, u.w);
  for (int it = 0; it < p.iterations; ++it) {
    for (std::int64_t y = 0; y < u.h; ++y)
      for (std::int64_t x = 0; x < u.w; ++x) {
        const float ub = neighbor_mean(u, y, x);
        const float vb = neighbor_mean(v, y, x);
        const float ix = d.ix(y, x), iy = d.iy(y, x);
        const float r = (ix * (ub - u0(y, x)) + iy * (vb - v0(y, x)) + d.it(y, x)) / (lam2 + ix * ix + iy * iy);
        nu(y, x) = ub - ix * r;
        nv(y, x) = vb - iy * r;
      }
    std::swap(u.px, nu.px);
    std::swap(v.px, nv.px);
  }
}

inline Plane warp(const Plane& b, const Plane& u, const Plane& v) {
  Plane out(b.h, b.w);
  for (std::int64_t y = 0; y < b.h; ++y)
    for (std::int64_t x = 0; x < b.w; ++x)
      out(y, x) = b.sample(static_cast<double>(y) + v(y, x), static_cast<double>(x) + u(y, x));
  return out;
}

inline void require_frame_pair(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || !(a.shape() == b.shape()))
    throw Error(ErrorCode::DimsMismatch, "frames " + a.shape().str() + " and " + b.shape().str());
}

}  // namespace detail

/// Horn-Schunck flow from frame_a to frame_b, both [H,W] grayscale. With more
/// than one pyramid level, coarse estimates are upsampled and refined against
/// frame_b warped by the current flow.
inline FlowField horn_schunck(const Tensor& frame_a, const Tensor& frame_b, const HSParams& p = {}) {
  detail::require_frame_pair(frame_a, frame_b);
  p.validate();
  std::vector<detail::Plane> pa{detail::Plane(frame_a)}, pb{detail::Plane(frame_b)};
  for (int lv = 1; lv < p.pyramid_levels && pa.back().h >= 8 && pa.back().w >= 8; ++lv) {
    pa.push_back(detail::half(pa.back()));
    pb.push_back(detail::half(pb.back()));
  }
  detail::Plane u(pa.back().h, pa.back().w), v(pa.back().h, pa.back().w);
  for (std::size_t lv = pa.size(); lv-- > 0;) {
    const auto& a = pa[lv];
    const auto& b = pb[lv];
    if (u.h != a.h || u.w != a.w) {
      const double sx = static_cast<double>(a.w) / static_cast<double>(u.w);
      const double sy = static_cast<double>(a.h) / static_cast<double>(u.h);
      u = detail::resize_flow(u, a.h, a.w, sx);
      v = detail::resize_flow(v, a.h, a.w, sy);
    }
    const bool moved = std::any_of(u.px.begin(), u.px.end(), [](float f) { return f != 0.0f; }) ||
                       std::any_of(v.px.begin(), v.px.end(), [](float f) { return f != 0.0f; });
    detail::hs_level(a, moved ? detail::warp(b, u, v) : b, u, v, p);
  }
  return {u.tensor(), v.tensor()};
}

/// Mean |Ix u + Iy v + It| of the linearized brightness constraint.
inline double brightness_residual(const Tensor& frame_a, const Tensor& frame_b, const FlowField& f) {
  detail::require_frame_pair(frame_a, frame_b);
  const auto d = detail::derivatives(detail::Plane(frame_a), detail::Plane(frame_b));
  double s = 0.0;
  for (std::size_t i = 0; i < d.it.px.size(); ++i)
    s += std::abs(d.ix.px[i] * f.u[i] + d.iy.px[i] * f.v[i] + d.it.px[i]);
  return s / static_cast<double>(d.it.px.size());
}

/// Teacher flow for every frame of a [C,L,H,W] clip (C = 3 or 1). Index t holds
/// the transition t -> t+1; the last frame repeats the final transition.
inline Tensor teacher_label_clip(const Tensor& clip, const HSParams& p = {}) {
  if (clip.rank() != 4 || (clip.dim(0) != 3 && clip.dim(0) != 1) || clip.dim(1) < 2)
    throw Error(ErrorCode::DimsMismatch, "teacher needs a [3|1,L>=2,H,W] clip, got " + clip.shape().str());
  const Tensor gray = clip.dim(0) == 3 ? to_grayscale(clip) : clip;
  const std::int64_t L = gray.dim(1), H = gray.dim(2), W = gray.dim(3);
  Tensor out(Shape{2, L, H, W});
  const auto plane = static_cast<std::size_t>(H * W);
  for (std::int64_t t = 0; t + 1 < L; ++t) {
    const FlowField f = horn_schunck(frame_slice(gray, 0, t), frame_slice(gray, 0, t + 1), p);
    std::copy(f.u.values().begin(), f.u.values().end(), out.data() + out.offset(0, t, 0, 0));
    std::copy(f.v.values().begin(), f.v.values().end(), out.data() + out.offset(1, t, 0, 0));
  }
  for (std::int64_t c = 0; c < 2; ++c) {
    const float* src = out.data() + out.offset(c, L - 2, 0, 0);
    std::copy(src, src + plane, out.data() + out.offset(c, L - 1, 0, 0));
  }
  return out;
}

}  // namespace v2v
