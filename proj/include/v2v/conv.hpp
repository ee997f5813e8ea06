#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "v2v/tensor.hpp"

namespace v2v {

/// Kernel / stride / padding triples in (L, H, W) order.
struct ConvGeometry {
  std::array<std::int64_t, 3> kernel{1, 1, 1};
  std::array<std::int64_t, 3> stride{1, 1, 1};
  std::array<std::int64_t, 3> pad{0, 0, 0};

  static ConvGeometry cube(std::int64_t k, std::int64_t s, std::int64_t p) {
    return {{k, k, k}, {s, s, s}, {p, p, p}};
  }

  std::int64_t kernel_volume() const noexcept { return kernel[0] * kernel[1] * kernel[2]; }

  friend bool operator==(const ConvGeometry&, const ConvGeometry&) = default;
};

/// floor((in + 2p - k) / s) + 1, or a value < 1 when the window does not fit.
inline std::int64_t conv_out_size(std::int64_t in, std::int64_t k, std::int64_t s, std::int64_t p) {
  const auto span = in + 2 * p - k;
  if (span < 0) return 0;
  return span / s + 1;
}

inline std::int64_t deconv_out_size(std::int64_t in, std::int64_t k, std::int64_t s, std::int64_t p) {
  return s * (in - 1) + k - 2 * p;
}

inline std::array<std::int64_t, 3> conv_out_dims(const std::array<std::int64_t, 3>& in, const ConvGeometry& g) {
  std::array<std::int64_t, 3> out{};
  for (int a = 0; a < 3; ++a) {
    if (g.kernel[a] < 1 || g.stride[a] < 1 || g.pad[a] < 0)
      throw Error(ErrorCode::NonPositiveOutputShape, "invalid kernel/stride/pad");
    out[a] = conv_out_size(in[a], g.kernel[a], g.stride[a], g.pad[a]);
    if (out[a] < 1)
      throw Error(ErrorCode::NonPositiveOutputShape,
                  "axis " + std::to_string(a) + ": input " + std::to_string(in[a]) + " kernel " +
                      std::to_string(g.kernel[a]) + " pad " + std::to_string(g.pad[a]));
  }
  return out;
}

inline std::array<std::int64_t, 3> deconv_out_dims(const std::array<std::int64_t, 3>& in, const ConvGeometry& g) {
  std::array<std::int64_t, 3> out{};
  for (int a = 0; a < 3; ++a) {
    if (g.kernel[a] < 1 || g.stride[a] < 1 || g.pad[a] < 0)
      throw Error(ErrorCode::NonPositiveOutputShape, "invalid kernel/stride/pad");
    out[a] = deconv_out_size(in[a], g.kernel[a], g.stride[a], g.pad[a]);
    if (out[a] < 1)
      throw Error(ErrorCode::NonPositiveOutputShape,
                  "axis " + std::to_string(a) + ": deconv output " + std::to_string(out[a]));
  }
  return out;
}

/// Weights [out, in, kL, kH, kW], bias [out].
struct Conv3dParams {
  ConvGeometry geometry;
  Tensor weights;
  Tensor bias;

  std::int64_t out_channels() const { return weights.dim(0); }
  std::int64_t in_channels() const { return weights.dim(1); }
};

/// Weights [in, out, kL, kH, kW], bias [out].
struct Deconv3dParams {
  ConvGeometry geometry;
  Tensor weights;
  Tensor bias;

  std::int64_t in_channels() const { return weights.dim(0); }
  std::int64_t out_channels() const { return weights.dim(1); }
};

struct ConvGrads {
  Tensor dx;
  Tensor dw;
  Tensor db;
};

namespace detail {

// C[M x N] (+)= A[M x K] * B[K x N], all row-major. Every C element sums its K
// products in increasing k, starting from the prior C value (or zero).
inline void gemm_nn(std::int64_t M, std::int64_t N, std::int64_t K, const float* A, std::int64_t lda,
                    const float* B, std::int64_t ldb, float* C, std::int64_t ldc, bool accumulate) {
  constexpr std::int64_t MR = 4;
  constexpr std::int64_t NR = 64;
  alignas(64) float acc[MR][NR];
  for (std::int64_t j0 = 0; j0 < N; j0 += NR) {
    const std::int64_t nb = std::min(NR, N - j0);
    for (std::int64_t i0 = 0; i0 < M; i0 += MR) {
      const std::int64_t mb = std::min(MR, M - i0);
      for (std::int64_t i = 0; i < MR; ++i)
        for (std::int64_t j = 0; j < NR; ++j)
          acc[i][j] = (accumulate && i < mb && j < nb) ? C[(i0 + i) * ldc + j0 + j] : 0.0f;
      if (mb == MR && nb == NR) {
        const float* a0 = A + (i0 + 0) * lda;
        const float* a1 = A + (i0 + 1) * lda;
        const float* a2 = A + (i0 + 2) * lda;
        const float* a3 = A + (i0 + 3) * lda;
        for (std::int64_t k = 0; k < K; ++k) {
          const float* b = B + k * ldb + j0;
          const float w0 = a0[k], w1 = a1[k], w2 = a2[k], w3 = a3[k];
#pragma GCC ivdep
          for (std::int64_t j = 0; j < NR; ++j) {
            const float bj = b[j];
            acc[0][j] += w0 * bj;
            acc[1][j] += w1 * bj;
            acc[2][j] += w2 * bj;
            acc[3][j] += w3 * bj;
          }
        }
      } else {
        for (std::int64_t k = 0; k < K; ++k) {
          const float* b = B + k * ldb + j0;
          for (std::int64_t i = 0; i < mb; ++i) {
            const float w = A[(i0 + i) * lda + k];
            for (std::int64_t j = 0; j < nb; ++j) acc[i][j] += w * b[j];
          }
        }
      }
      for (std::int64_t i = 0; i < mb; ++i)
        std::copy(acc[i], acc[i] + nb, C + (i0 + i) * ldc + j0);
    }
  }
}

// C[M x R] += A[M x N] * B[R x N]^T. Dot products use 16 interleaved partial
// sums that are reduced in a fixed order.
inline void gemm_nt_accumulate(std::int64_t M, std::int64_t R, std::int64_t N, const float* A, std::int64_t lda,
                               const float* B, std::int64_t ldb, float* C, std::int64_t ldc) {
  constexpr std::int64_t LANES = 16;
  constexpr std::int64_t BM = 4;
  const std::int64_t n_main = N - N % LANES;
  for (std::int64_t i0 = 0; i0 < M; i0 += BM) {
    const std::int64_t mb = std::min(BM, M - i0);
    for (std::int64_t r = 0; r < R; ++r) {
      const float* b = B + r * ldb;
      alignas(64) float part[BM][LANES] = {};
      if (mb == BM) {
        const float* a0 = A + (i0 + 0) * lda;
        const float* a1 = A + (i0 + 1) * lda;
        const float* a2 = A + (i0 + 2) * lda;
        const float* a3 = A + (i0 + 3) * lda;
        for (std::int64_t n = 0; n < n_main; n += LANES) {
#pragma GCC ivdep
          for (std::int64_t l = 0; l < LANES; ++l) {
            const float bv = b[n + l];
            part[0][l] += a0[n + l] * bv;
            part[1][l] += a1[n + l] * bv;
            part[2][l] += a2[n + l] * bv;
            part[3][l] += a3[n + l] * bv;
          }
        }
      } else {
        for (std::int64_t i = 0; i < mb; ++i) {
          const float* a = A + (i0 + i) * lda;
          for (std::int64_t n = 0; n < n_main; n += LANES)
            for (std::int64_t l = 0; l < LANES; ++l) part[i][l] += a[n + l] * b[n + l];
        }
      }
      for (std::int64_t i = 0; i < mb; ++i) {
        const float* a = A + (i0 + i) * lda;
        float s = 0.0f;
        for (std::int64_t l = 0; l < LANES; ++l) s += part[i][l];
        for (std::int64_t n = n_main; n < N; ++n) s += a[n] * b[n];
        C[(i0 + i) * ldc + r] += s;
      }
    }
  }
}

// Describes one strided-window correlation between a "big" grid (the conv
// input) and a "small" grid (the conv output).
struct WindowMap {
  std::int64_t channels;               // channels on the big grid
  std::array<std::int64_t, 3> big;     // L, H, W of the big grid
  std::array<std::int64_t, 3> small;   // L, H, W of the small grid
  ConvGeometry g;

  std::int64_t rows() const { return channels * g.kernel_volume(); }
  std::int64_t small_count() const { return small[0] * small[1] * small[2]; }
  std::int64_t big_count() const { return big[0] * big[1] * big[2]; }
};

struct Segment {
  std::int64_t lo, ho, wo, len, col;
};

// Splits small-grid positions [n0, n0 + nb) into runs along the W axis.
inline void segments_for(const WindowMap& m, std::int64_t n0, std::int64_t nb, std::vector<Segment>& segs) {
  segs.clear();
  const std::int64_t hw = m.small[1] * m.small[2];
  std::int64_t n = n0;
  while (n < n0 + nb) {
    const std::int64_t lo = n / hw;
    const std::int64_t rem = n % hw;
    const std::int64_t ho = rem / m.small[2];
    const std::int64_t wo = rem % m.small[2];
    const std::int64_t len = std::min(m.small[2] - wo, n0 + nb - n);
    segs.push_back({lo, ho, wo, len, n - n0});
    n += len;
  }
}

// Valid output-w range [lo, hi) such that wo*s + kw - p lies inside [0, W).
inline void valid_w_range(std::int64_t wo0, std::int64_t len, std::int64_t kw, const WindowMap& m,
                          std::int64_t& t_lo, std::int64_t& t_hi) {
  const std::int64_t s = m.g.stride[2], p = m.g.pad[2], W = m.big[2];
  // wi(t) = (wo0 + t) * s + kw - p
  const std::int64_t base = wo0 * s + kw - p;
  t_lo = base >= 0 ? 0 : (-base + s - 1) / s;
  const std::int64_t last = W - 1 - base;  // need t*s <= last
  t_hi = last < 0 ? 0 : std::min(len, last / s + 1);
  t_lo = std::min(t_lo, t_hi);
}

// col[r, j] for rows r = (c, kl, kh, kw) and small-grid positions j.
inline void im2col(const WindowMap& m, const float* x, const std::vector<Segment>& segs, std::int64_t nb,
                   float* col) {
  const auto& g = m.g;
  const std::int64_t L = m.big[0], H = m.big[1], W = m.big[2];
  std::int64_t r = 0;
  for (std::int64_t c = 0; c < m.channels; ++c)
    for (std::int64_t kl = 0; kl < g.kernel[0]; ++kl)
      for (std::int64_t kh = 0; kh < g.kernel[1]; ++kh)
        for (std::int64_t kw = 0; kw < g.kernel[2]; ++kw, ++r) {
          float* dst = col + r * nb;
          for (const auto& sg : segs) {
            float* d = dst + sg.col;
            const std::int64_t li = sg.lo * g.stride[0] + kl - g.pad[0];
            const std::int64_t hi = sg.ho * g.stride[1] + kh - g.pad[1];
            if (li < 0 || li >= L || hi < 0 || hi >= H) {
              std::fill(d, d + sg.len, 0.0f);
              continue;
            }
            std::int64_t t_lo, t_hi;
            valid_w_range(sg.wo, sg.len, kw, m, t_lo, t_hi);
            const float* row = x + ((c * L + li) * H + hi) * W;
            std::fill(d, d + t_lo, 0.0f);
            const std::int64_t base = sg.wo * g.stride[2] + kw - g.pad[2];
            if (g.stride[2] == 1) {
              std::copy(row + base + t_lo, row + base + t_hi, d + t_lo);
            } else {
              for (std::int64_t t = t_lo; t < t_hi; ++t) d[t] = row[base + t * g.stride[2]];
            }
            std::fill(d + t_hi, d + sg.len, 0.0f);
          }
        }
}

// x[c, window(r, j)] += col[r, j]; out-of-range taps are dropped.
inline void col2im(const WindowMap& m, const float* col, const std::vector<Segment>& segs, std::int64_t nb,
                   float* x) {
  const auto& g = m.g;
  const std::int64_t L = m.big[0], H = m.big[1], W = m.big[2];
  std::int64_t r = 0;
  for (std::int64_t c = 0; c < m.channels; ++c)
    for (std::int64_t kl = 0; kl < g.kernel[0]; ++kl)
      for (std::int64_t kh = 0; kh < g.kernel[1]; ++kh)
        for (std::int64_t kw = 0; kw < g.kernel[2]; ++kw, ++r) {
          const float* src = col + r * nb;
          for (const auto& sg : segs) {
            const std::int64_t li = sg.lo * g.stride[0] + kl - g.pad[0];
            const std::int64_t hi = sg.ho * g.stride[1] + kh - g.pad[1];
            if (li < 0 || li >= L || hi < 0 || hi >= H) continue;
            std::int64_t t_lo, t_hi;
            valid_w_range(sg.wo, sg.len, kw, m, t_lo, t_hi);
            float* row = x + ((c * L + li) * H + hi) * W;
            const float* s = src + sg.col;
            const std::int64_t base = sg.wo * g.stride[2] + kw - g.pad[2];
            if (g.stride[2] == 1) {
              for (std::int64_t t = t_lo; t < t_hi; ++t) row[base + t] += s[t];
            } else {
              for (std::int64_t t = t_lo; t < t_hi; ++t) row[base + t * g.stride[2]] += s[t];
            }
          }
        }
}

inline std::int64_t column_block(std::int64_t rows, std::int64_t n) {
  constexpr std::int64_t kBudget = std::int64_t{1} << 18;  // floats per column buffer
  std::int64_t nb = std::max<std::int64_t>(64, (kBudget / std::max<std::int64_t>(rows, 1)) / 64 * 64);
  return std::min(nb, n);
}

// small[o, j] (+)= sum_r w[o, r] * im2col(big)[r, j]
inline void window_gather(const WindowMap& m, const float* big, const float* w, std::int64_t out_channels,
                          float* small, bool accumulate) {
  const std::int64_t R = m.rows(), N = m.small_count();
  const std::int64_t nb_max = column_block(R, N);
  std::vector<float> col(static_cast<std::size_t>(R * nb_max));
  std::vector<Segment> segs;
  for (std::int64_t n0 = 0; n0 < N; n0 += nb_max) {
    const std::int64_t nb = std::min(nb_max, N - n0);
    segments_for(m, n0, nb, segs);
    im2col(m, big, segs, nb, col.data());
    gemm_nn(out_channels, nb, R, w, R, col.data(), nb, small + n0, N, accumulate);
  }
}

// big += col2im(w^T * small)
inline void window_scatter(const WindowMap& m, const float* small, const float* w, std::int64_t out_channels,
                           float* big) {
  const std::int64_t R = m.rows(), N = m.small_count();
  std::vector<float> wt(static_cast<std::size_t>(R * out_channels));
  for (std::int64_t o = 0; o < out_channels; ++o)
    for (std::int64_t r = 0; r < R; ++r) wt[r * out_channels + o] = w[o * R + r];
  const std::int64_t nb_max = column_block(R, N);
  std::vector<float> col(static_cast<std::size_t>(R * nb_max));
  std::vector<Segment> segs;
  for (std::int64_t n0 = 0; n0 < N; n0 += nb_max) {
    const std::int64_t nb = std::min(nb_max, N - n0);
    segments_for(m, n0, nb, segs);
    gemm_nn(R, nb, out_channels, wt.data(), out_channels, small + n0, N, col.data(), nb, false);
    col2im(m, col.data(), segs, nb, big);
  }
}

// dw[o, r] += sum_j small[o, j] * im2col(big)[r, j]
inline void window_weight_grad(const WindowMap& m, const float* big, const float* small, std::int64_t out_channels,
                               float* dw) {
  const std::int64_t R = m.rows(), N = m.small_count();
  const std::int64_t nb_max = column_block(R, N);
  std::vector<float> col(static_cast<std::size_t>(R * nb_max));
  std::vector<Segment> segs;
  for (std::int64_t n0 = 0; n0 < N; n0 += nb_max) {
    const std::int64_t nb = std::min(nb_max, N - n0);
    segments_for(m, n0, nb, segs);
    im2col(m, big, segs, nb, col.data());
    gemm_nt_accumulate(out_channels, R, nb, small + n0, N, col.data(), nb, dw, R);
  }
}

inline std::array<std::int64_t, 3> spatial_dims(const Tensor& t) { return {t.dim(1), t.dim(2), t.dim(3)}; }

inline void require_video(const Tensor& t, const char* what) {
  if (t.rank() != 4) throw Error(ErrorCode::ShapeMismatch, std::string(what) + " must be [C,L,H,W], got " + t.shape().str());
}

inline void check_weights(const Tensor& w, const Tensor& b, const ConvGeometry& g, std::int64_t bias_len) {
  if (w.rank() != 5 || w.dim(2) != g.kernel[0] || w.dim(3) != g.kernel[1] || w.dim(4) != g.kernel[2])
    throw Error(ErrorCode::ShapeMismatch, "weights " + w.shape().str() + " do not match kernel");
  if (b.rank() != 1 || b.dim(0) != bias_len)
    throw Error(ErrorCode::ShapeMismatch, "bias " + b.shape().str() + " needs " + std::to_string(bias_len) + " entries");
}

inline void add_bias(Tensor& y, const Tensor& bias) {
  const auto plane = static_cast<std::size_t>(y.size() / static_cast<std::size_t>(y.dim(0)));
  for (std::int64_t o = 0; o < y.dim(0); ++o) {
    float* p = y.data() + static_cast<std::size_t>(o) * plane;
    const float b = bias[static_cast<std::size_t>(o)];
    for (std::size_t i = 0; i < plane; ++i) p[i] += b;
  }
}

inline Tensor bias_grad(const Tensor& dy) {
  Tensor db(Shape{dy.dim(0)});
  const auto plane = dy.size() / static_cast<std::size_t>(dy.dim(0));
  for (std::int64_t o = 0; o < dy.dim(0); ++o) {
    const float* p = dy.data() + static_cast<std::size_t>(o) * plane;
    double s = 0.0;
    for (std::size_t i = 0; i < plane; ++i) s += p[i];
    db[static_cast<std::size_t>(o)] = static_cast<float>(s);
  }
  return db;
}

}  // namespace detail

/// Cross-correlation with zero padding:
/// y[o,l,h,w] = b[o] + sum_{c,dl,dh,dw} x[c, l*sL+dl-pL, h*sH+dh-pH, w*sW+dw-pW] * w[o,c,dl,dh,dw].
inline Tensor conv3d_forward(const Tensor& x, const Tensor& weights, const Tensor& bias, const ConvGeometry& g) {
  detail::require_video(x, "conv3d input");
  detail::check_weights(weights, bias, g, weights.dim(0));
  if (x.dim(0) != weights.dim(1))
    throw Error(ErrorCode::ChannelMismatch, "input has " + std::to_string(x.dim(0)) + " channels, weights expect " +
                                                std::to_string(weights.dim(1)));
  const auto out = conv_out_dims(detail::spatial_dims(x), g);
  const std::int64_t cout = weights.dim(0);
  Tensor y(Shape{cout, out[0], out[1], out[2]});
  for (std::int64_t o = 0; o < cout; ++o)
    std::fill_n(y.data() + o * out[0] * out[1] * out[2], out[0] * out[1] * out[2], bias[static_cast<std::size_t>(o)]);
  detail::WindowMap m{x.dim(0), detail::spatial_dims(x), out, g};
  detail::window_gather(m, x.data(), weights.data(), cout, y.data(), true);
  return y;
}

inline Tensor conv3d_forward(const Tensor& x, const Conv3dParams& p) {
  return conv3d_forward(x, p.weights, p.bias, p.geometry);
}

/// Gradients of sum(y * dy). `need_dx = false` skips the input gradient (dx is
/// left empty), which the first layer of a network never uses.
inline ConvGrads conv3d_backward(const Tensor& x, const Tensor& weights, const ConvGeometry& g, const Tensor& dy,
                                 bool need_dx = true) {
  detail::require_video(x, "conv3d input");
  const auto out = conv_out_dims(detail::spatial_dims(x), g);
  const std::int64_t cout = weights.dim(0);
  if (!(dy.shape() == Shape{cout, out[0], out[1], out[2]}))
    throw Error(ErrorCode::ShapeMismatch, "conv3d upstream gradient " + dy.shape().str());
  if (x.dim(0) != weights.dim(1)) throw Error(ErrorCode::ChannelMismatch, "conv3d backward channel count");
  detail::WindowMap m{x.dim(0), detail::spatial_dims(x), out, g};
  ConvGrads grads{Tensor(), Tensor(weights.shape()), detail::bias_grad(dy)};
  if (need_dx) {
    grads.dx = Tensor(x.shape());
    detail::window_scatter(m, dy.data(), weights.data(), cout, grads.dx.data());
  }
  detail::window_weight_grad(m, x.data(), dy.data(), cout, grads.dw.data());
  return grads;
}

inline ConvGrads conv3d_backward(const Tensor& x, const Conv3dParams& p, const Tensor& dy) {
  return conv3d_backward(x, p.weights, p.geometry, dy);
}

/// Transposed convolution: each input value scales the kernel and is summed
/// into the output window anchored at (l*sL-pL, h*sH-pH, w*sW-pW). Weights are
/// [in, out, kL, kH, kW]; this is the adjoint of conv3d_forward with the same
/// weights and geometry, plus bias.
inline Tensor deconv3d_forward(const Tensor& x, const Tensor& weights, const Tensor& bias, const ConvGeometry& g) {
  detail::require_video(x, "deconv3d input");
  detail::check_weights(weights, bias, g, weights.dim(1));
  if (x.dim(0) != weights.dim(0))
    throw Error(ErrorCode::ChannelMismatch, "input has " + std::to_string(x.dim(0)) + " channels, weights expect " +
                                                std::to_string(weights.dim(0)));
  const auto out = deconv_out_dims(detail::spatial_dims(x), g);
  const std::int64_t cout = weights.dim(1);
  Tensor y(Shape{cout, out[0], out[1], out[2]});
  detail::WindowMap m{cout, out, detail::spatial_dims(x), g};
  detail::window_scatter(m, x.data(), weights.data(), x.dim(0), y.data());
  detail::add_bias(y, bias);
  return y;
}

inline Tensor deconv3d_forward(const Tensor& x, const Deconv3dParams& p) {
  return deconv3d_forward(x, p.weights, p.bias, p.geometry);
}

/// dx is conv3d_forward(dy) with the shared weights and no bias.
inline ConvGrads deconv3d_backward(const Tensor& x, const Tensor& weights, const ConvGeometry& g, const Tensor& dy) {
  detail::require_video(x, "deconv3d input");
  const auto out = deconv_out_dims(detail::spatial_dims(x), g);
  const std::int64_t cout = weights.dim(1);
  if (!(dy.shape() == Shape{cout, out[0], out[1], out[2]}))
    throw Error(ErrorCode::ShapeMismatch, "deconv3d upstream gradient " + dy.shape().str());
  if (x.dim(0) != weights.dim(0)) throw Error(ErrorCode::ChannelMismatch, "deconv3d backward channel count");
  ConvGrads grads;
  grads.dx = conv3d_forward(dy, weights, Tensor(Shape{weights.dim(0)}), g);
  grads.dw = Tensor(weights.shape());
  detail::WindowMap m{cout, out, detail::spatial_dims(x), g};
  detail::window_weight_grad(m, dy.data(), x.data(), x.dim(0), grads.dw.data());
  grads.db = detail::bias_grad(dy);
  return grads;
}

inline ConvGrads deconv3d_backward(const Tensor& x, const Deconv3dParams& p, const Tensor& dy) {
  return deconv3d_backward(x, p.weights, p.geometry, dy);
}

}  // namespace v2v
