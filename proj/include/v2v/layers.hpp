#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <utility>
#include <vector>

#include "v2v/conv.hpp"
#include "v2v/tensor.hpp"

namespace v2v {

struct Pool3dParams {
  std::array<std::int64_t, 3> kernel{1, 2, 2};
  std::array<std::int64_t, 3> stride{1, 2, 2};
};

/// Max-pool output plus, for every output element, the flat input index of
/// the winning element.
struct PoolResult {
  Tensor y;
  std::vector<std::int64_t> argmax;
};

inline std::array<std::int64_t, 3> pool_out_dims(const std::array<std::int64_t, 3>& in, const Pool3dParams& p) {
  std::array<std::int64_t, 3> out{};
  for (int a = 0; a < 3; ++a) {
    if (p.kernel[a] < 1 || p.stride[a] < 1 || in[a] < p.kernel[a])
      throw Error(ErrorCode::NonPositiveOutputShape, "pool window does not fit axis " + std::to_string(a));
    out[a] = (in[a] - p.kernel[a]) / p.stride[a] + 1;
  }
  return out;
}

/// Windowed max. Windows are scanned in increasing flat index and only a
/// strictly larger value replaces the current winner, so ties resolve to the
/// smallest index.
inline PoolResult maxpool3d_forward(const Tensor& x, const Pool3dParams& p) {
  detail::require_video(x, "maxpool input");
  const std::int64_t C = x.dim(0), L = x.dim(1), H = x.dim(2), W = x.dim(3);
  const auto out = pool_out_dims({L, H, W}, p);
  PoolResult r{Tensor(Shape{C, out[0], out[1], out[2]}), {}};
  r.argmax.resize(r.y.size());
  std::size_t idx = 0;
  for (std::int64_t c = 0; c < C; ++c)
    for (std::int64_t lo = 0; lo < out[0]; ++lo)
      for (std::int64_t ho = 0; ho < out[1]; ++ho)
        for (std::int64_t wo = 0; wo < out[2]; ++wo, ++idx) {
          std::int64_t best = -1;
          float best_v = 0.0f;
          for (std::int64_t kl = 0; kl < p.kernel[0]; ++kl)
            for (std::int64_t kh = 0; kh < p.kernel[1]; ++kh) {
              const std::int64_t row = ((c * L + lo * p.stride[0] + kl) * H + ho * p.stride[1] + kh) * W;
              for (std::int64_t kw = 0; kw < p.kernel[2]; ++kw) {
                const std::int64_t f = row + wo * p.stride[2] + kw;
                const float v = x[static_cast<std::size_t>(f)];
                if (best < 0 || v > best_v) {
                  best = f;
                  best_v = v;
                }
              }
            }
          r.y[idx] = best_v;
          r.argmax[idx] = best;
        }
  return r;
}

/// Routes each upstream element to its cached argmax position, accumulating
/// where windows overlap.
inline Tensor maxpool3d_backward(const std::vector<std::int64_t>& argmax, const Tensor& dy, const Shape& x_shape) {
  if (argmax.size() != dy.size())
    throw Error(ErrorCode::ShapeMismatch, "argmax cache has " + std::to_string(argmax.size()) +
                                              " entries, gradient has " + std::to_string(dy.size()));
  Tensor dx(x_shape);
  const auto n = static_cast<std::int64_t>(dx.size());
  for (std::size_t i = 0; i < argmax.size(); ++i) {
    if (argmax[i] < 0 || argmax[i] >= n) throw Error(ErrorCode::ShapeMismatch, "argmax index out of range");
    dx[static_cast<std::size_t>(argmax[i])] += dy[i];
  }
  return dx;
}

inline Tensor relu_forward(const Tensor& x) {
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > 0.0f ? x[i] : 0.0f;
  return y;
}

/// Subgradient 0 at x == 0.
inline Tensor relu_backward(const Tensor& x, const Tensor& dy) {
  if (!(x.shape() == dy.shape())) throw Error(ErrorCode::ShapeMismatch, "relu gradient " + dy.shape().str());
  Tensor dx(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) dx[i] = x[i] > 0.0f ? dy[i] : 0.0f;
  return dx;
}

inline Tensor concat_channels(const Tensor& a, const Tensor& b) {
  detail::require_video(a, "concat input");
  detail::require_video(b, "concat input");
  if (a.dim(1) != b.dim(1) || a.dim(2) != b.dim(2) || a.dim(3) != b.dim(3))
    throw Error(ErrorCode::SpatialMismatch, a.shape().str() + " vs " + b.shape().str());
  Tensor y(Shape{a.dim(0) + b.dim(0), a.dim(1), a.dim(2), a.dim(3)});
  std::copy(a.values().begin(), a.values().end(), y.data());
  std::copy(b.values().begin(), b.values().end(), y.data() + a.size());
  return y;
}

/// Splits an upstream gradient back into the slices for the first
/// `first_channels` channels and the rest.
inline std::pair<Tensor, Tensor> concat_backward(const Tensor& dy, std::int64_t first_channels) {
  detail::require_video(dy, "concat gradient");
  if (first_channels < 1 || first_channels >= dy.dim(0))
    throw Error(ErrorCode::ShapeMismatch, "split point outside channel range");
  const std::int64_t L = dy.dim(1), H = dy.dim(2), W = dy.dim(3);
  Tensor da(Shape{first_channels, L, H, W});
  Tensor db(Shape{dy.dim(0) - first_channels, L, H, W});
  std::copy(dy.data(), dy.data() + da.size(), da.data());
  std::copy(dy.data() + da.size(), dy.data() + dy.size(), db.data());
  return {std::move(da), std::move(db)};
}

namespace detail {

struct InterpTap {
  std::int64_t i0, i1;
  float w0, w1;
};

// Half-pixel mapping src = (dst + 0.5) * in / out - 0.5, clamped to [0, in-1].
inline std::vector<InterpTap> interp_taps(std::int64_t in, std::int64_t out) {
  std::vector<InterpTap> taps(static_cast<std::size_t>(out));
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  for (std::int64_t d = 0; d < out; ++d) {
    double src = (static_cast<double>(d) + 0.5) * scale - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(in - 1));
    const auto i0 = static_cast<std::int64_t>(std::floor(src));
    const auto i1 = std::min(i0 + 1, in - 1);
    const auto f = static_cast<float>(src - static_cast<double>(i0));
    taps[static_cast<std::size_t>(d)] = {i0, i1, 1.0f - f, f};
  }
  return taps;
}

}  // namespace detail

/// Separable linear interpolation along L, H and W.
inline Tensor trilinear_upsample(const Tensor& x, const std::array<std::int64_t, 3>& out) {
  detail::require_video(x, "upsample input");
  const std::int64_t C = x.dim(0), L = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (out[0] < L || out[1] < H || out[2] < W)
    throw Error(ErrorCode::DownsampleRequested, x.shape().str() + " to smaller grid");
  const auto tl = detail::interp_taps(L, out[0]);
  const auto th = detail::interp_taps(H, out[1]);
  const auto tw = detail::interp_taps(W, out[2]);
  Tensor y(Shape{C, out[0], out[1], out[2]});
  std::size_t idx = 0;
  for (std::int64_t c = 0; c < C; ++c)
    for (const auto& a : tl)
      for (const auto& b : th) {
        const float* r00 = x.data() + ((c * L + a.i0) * H + b.i0) * W;
        const float* r01 = x.data() + ((c * L + a.i0) * H + b.i1) * W;
        const float* r10 = x.data() + ((c * L + a.i1) * H + b.i0) * W;
        const float* r11 = x.data() + ((c * L + a.i1) * H + b.i1) * W;
        for (const auto& e : tw) {
          const float v00 = e.w0 * r00[e.i0] + e.w1 * r00[e.i1];
          const float v01 = e.w0 * r01[e.i0] + e.w1 * r01[e.i1];
          const float v10 = e.w0 * r10[e.i0] + e.w1 * r10[e.i1];
          const float v11 = e.w0 * r11[e.i0] + e.w1 * r11[e.i1];
          y[idx++] = a.w0 * (b.w0 * v00 + b.w1 * v01) + a.w1 * (b.w0 * v10 + b.w1 * v11);
        }
      }
  return y;
}

/// Adjoint of trilinear_upsample.
inline Tensor trilinear_upsample_backward(const Tensor& dy, const Shape& x_shape) {
  detail::require_video(dy, "upsample gradient");
  const std::int64_t C = x_shape[0], L = x_shape[1], H = x_shape[2], W = x_shape[3];
  if (dy.dim(0) != C) throw Error(ErrorCode::ShapeMismatch, "upsample gradient channels");
  const auto tl = detail::interp_taps(L, dy.dim(1));
  const auto th = detail::interp_taps(H, dy.dim(2));
  const auto tw = detail::interp_taps(W, dy.dim(3));
  Tensor dx(x_shape);
  std::size_t idx = 0;
  for (std::int64_t c = 0; c < C; ++c)
    for (const auto& a : tl)
      for (const auto& b : th) {
        float* r00 = dx.data() + ((c * L + a.i0) * H + b.i0) * W;
        float* r01 = dx.data() + ((c * L + a.i0) * H + b.i1) * W;
        float* r10 = dx.data() + ((c * L + a.i1) * H + b.i0) * W;
        float* r11 = dx.data() + ((c * L + a.i1) * H + b.i1) * W;
        const float w00 = a.w0 * b.w0, w01 = a.w0 * b.w1, w10 = a.w1 * b.w0, w11 = a.w1 * b.w1;
        for (const auto& e : tw) {
          const float g = dy[idx++];
          r00[e.i0] += w00 * e.w0 * g;
          r00[e.i1] += w00 * e.w1 * g;
          r01[e.i0] += w01 * e.w0 * g;
          r01[e.i1] += w01 * e.w1 * g;
          r10[e.i0] += w10 * e.w0 * g;
          r10[e.i1] += w10 * e.w1 * g;
          r11[e.i0] += w11 * e.w0 * g;
          r11[e.i1] += w11 * e.w1 * g;
        }
      }
  return dx;
}

}  // namespace v2v
