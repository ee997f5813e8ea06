#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "v2v/conv.hpp"
#include "v2v/gradcheck.hpp"
#include "v2v/graph.hpp"
#include "v2v/layers.hpp"
#include "v2v/tensor.hpp"

// Direct-loop f64 forward passes. The gradient checker differentiates these
// numerically, so its finite differences are free of f32 rounding and share no
// code with the GEMM kernels under test.
namespace v2v::reference {

struct Volume {
  Shape shape;
  std::vector<double> v;

  Volume() = default;
  explicit Volume(const Shape& s) : shape(s), v(static_cast<std::size_t>(s.numel()), 0.0) {}
  explicit Volume(const Tensor& t) : shape(t.shape()), v(t.values().begin(), t.values().end()) {}

  std::int64_t dim(std::size_t i) const { return shape[i]; }
};

inline Tensor to_tensor(const Volume& v) {
  Tensor t(v.shape);
  for (std::size_t i = 0; i < v.v.size(); ++i) t[i] = static_cast<float>(v.v[i]);
  return t;
}

/// ReLU signs and pool winners seen during a forward pass. Two inputs with the
/// same decisions lie on the same linear piece of the network.
using Decisions = std::vector<std::int64_t>;

inline Volume conv3d(const Volume& x, const Volume& w, const Volume& b, const ConvGeometry& g) {
  const std::int64_t C = x.dim(0), L = x.dim(1), H = x.dim(2), W = x.dim(3), O = w.dim(0);
  const auto od = conv_out_dims({L, H, W}, g);
  const auto& k = g.kernel;
  const auto& s = g.stride;
  const auto& p = g.pad;
  Volume y(Shape{O, od[0], od[1], od[2]});
  std::size_t idx = 0;
  for (std::int64_t o = 0; o < O; ++o)
    for (std::int64_t l = 0; l < od[0]; ++l)
      for (std::int64_t h = 0; h < od[1]; ++h)
        for (std::int64_t q = 0; q < od[2]; ++q, ++idx) {
          double acc = b.v[static_cast<std::size_t>(o)];
          for (std::int64_t c = 0; c < C; ++c)
            for (std::int64_t a = 0; a < k[0]; ++a) {
              const std::int64_t li = l * s[0] - p[0] + a;
              if (li < 0 || li >= L) continue;
              for (std::int64_t e = 0; e < k[1]; ++e) {
                const std::int64_t hi = h * s[1] - p[1] + e;
                if (hi < 0 || hi >= H) continue;
                for (std::int64_t f = 0; f < k[2]; ++f) {
                  const std::int64_t wi = q * s[2] - p[2] + f;
                  if (wi < 0 || wi >= W) continue;
                  acc += w.v[static_cast<std::size_t>((((o * C + c) * k[0] + a) * k[1] + e) * k[2] + f)] *
                         x.v[static_cast<std::size_t>(((c * L + li) * H + hi) * W + wi)];
                }
              }
            }
          y.v[idx] = acc;
        }
  return y;
}

/// Scatter form: input voxel i feeds output i * stride - pad + tap.
inline Volume deconv3d(const Volume& x, const Volume& w, const Volume& b, const ConvGeometry& g) {
  const std::int64_t C = x.dim(0), L = x.dim(1), H = x.dim(2), W = x.dim(3), O = w.dim(1);
  const auto od = deconv_out_dims({L, H, W}, g);
  const auto& k = g.kernel;
  const auto& s = g.stride;
  const auto& p = g.pad;
  Volume y(Shape{O, od[0], od[1], od[2]});
  const auto plane = static_cast<std::size_t>(od[0] * od[1] * od[2]);
  for (std::int64_t o = 0; o < O; ++o)
    for (std::size_t i = 0; i < plane; ++i) y.v[static_cast<std::size_t>(o) * plane + i] = b.v[static_cast<std::size_t>(o)];
  for (std::int64_t c = 0; c < C; ++c)
    for (std::int64_t l = 0; l < L; ++l)
      for (std::int64_t h = 0; h < H; ++h)
        for (std::int64_t q = 0; q < W; ++q) {
          const double xv = x.v[static_cast<std::size_t>(((c * L + l) * H + h) * W + q)];
          for (std::int64_t o = 0; o < O; ++o)
            for (std::int64_t a = 0; a < k[0]; ++a) {
              const std::int64_t lo = l * s[0] - p[0] + a;
              if (lo < 0 || lo >= od[0]) continue;
              for (std::int64_t e = 0; e < k[1]; ++e) {
                const std::int64_t ho = h * s[1] - p[1] + e;
                if (ho < 0 || ho >= od[1]) continue;
                for (std::int64_t f = 0; f < k[2]; ++f) {
                  const std::int64_t wo = q * s[2] - p[2] + f;
                  if (wo < 0 || wo >= od[2]) continue;
                  y.v[static_cast<std::size_t>(((o * od[0] + lo) * od[1] + ho) * od[2] + wo)] +=
                      xv * w.v[static_cast<std::size_t>((((c * O + o) * k[0] + a) * k[1] + e) * k[2] + f)];
                }
              }
            }
        }
  return y;
}

inline Volume maxpool3d(const Volume& x, const Pool3dParams& p, Decisions* d = nullptr) {
  const std::int64_t C = x.dim(0), L = x.dim(1), H = x.dim(2), W = x.dim(3);
  const auto od = pool_out_dims({L, H, W}, p);
  Volume y(Shape{C, od[0], od[1], od[2]});
  std::size_t idx = 0;
  for (std::int64_t c = 0; c < C; ++c)
    for (std::int64_t l = 0; l < od[0]; ++l)
      for (std::int64_t h = 0; h < od[1]; ++h)
        for (std::int64_t q = 0; q < od[2]; ++q, ++idx) {
          std::int64_t best = -1;
          double bv = 0.0;
          for (std::int64_t a = 0; a < p.kernel[0]; ++a)
            for (std::int64_t e = 0; e < p.kernel[1]; ++e)
              for (std::int64_t f = 0; f < p.kernel[2]; ++f) {
                const std::int64_t i = ((c * L + l * p.stride[0] + a) * H + h * p.stride[1] + e) * W + q * p.stride[2] + f;
                const double v = x.v[static_cast<std::size_t>(i)];
                if (best < 0 || v > bv) {
                  best = i;
                  bv = v;
                }
              }
          y.v[idx] = bv;
          if (d) d->push_back(best);
        }
  return y;
}

inline Volume relu(const Volume& x, Decisions* d = nullptr) {
  Volume y(x.shape);
  for (std::size_t i = 0; i < x.v.size(); ++i) {
    const bool on = x.v[i] > 0.0;
    y.v[i] = on ? x.v[i] : 0.0;
    if (d) d->push_back(on);
  }
  return y;
}

inline Volume concat(const Volume& a, const Volume& b) {
  Volume y(Shape{a.dim(0) + b.dim(0), a.dim(1), a.dim(2), a.dim(3)});
  std::copy(a.v.begin(), a.v.end(), y.v.begin());
  std::copy(b.v.begin(), b.v.end(), y.v.begin() + static_cast<std::ptrdiff_t>(a.v.size()));
  return y;
}

/// Evaluates each output voxel as the weighted sum of its eight corners.
inline Volume trilinear(const Volume& x, const std::array<std::int64_t, 3>& out) {
  const std::int64_t C = x.dim(0), L = x.dim(1), H = x.dim(2), W = x.dim(3);
  const auto tl = detail::interp_taps(L, out[0]);
  const auto th = detail::interp_taps(H, out[1]);
  const auto tw = detail::interp_taps(W, out[2]);
  Volume y(Shape{C, out[0], out[1], out[2]});
  std::size_t idx = 0;
  for (std::int64_t c = 0; c < C; ++c)
    for (const auto& a : tl)
      for (const auto& b : th)
        for (const auto& e : tw) {
          double acc = 0.0;
          for (int i = 0; i < 8; ++i) {
            const std::int64_t li = (i & 4) ? a.i1 : a.i0, hi = (i & 2) ? b.i1 : b.i0, wi = (i & 1) ? e.i1 : e.i0;
            const double wt = static_cast<double>((i & 4) ? a.w1 : a.w0) * static_cast<double>((i & 2) ? b.w1 : b.w0) *
                              static_cast<double>((i & 1) ? e.w1 : e.w0);
            acc += wt * x.v[static_cast<std::size_t>(((c * L + li) * H + hi) * W + wi)];
          }
          y.v[idx++] = acc;
        }
  return y;
}

/// Whole-graph forward with the given parameter values.
inline Volume forward(const NetGraph& g, const ParamMap& params, const Tensor& input, Decisions* d = nullptr) {
  const Volume x(input);
  std::vector<Volume> outs(g.layers.size());
  auto in = [&](const LayerSpec& l, std::size_t k) -> const Volume& {
    const auto id = l.input_ids[k];
    return id < 0 ? x : outs[static_cast<std::size_t>(id)];
  };
  for (std::size_t i = 0; i < g.layers.size(); ++i) {
    const LayerSpec& l = g.layers[i];
    if (has_params(l.kind)) {
      const Volume w(params.at(weight_name(l.name)));
      const Volume b(params.at(bias_name(l.name)));
      outs[i] = is_conv(l.kind) ? conv3d(in(l, 0), w, b, l.geometry) : deconv3d(in(l, 0), w, b, l.geometry);
    } else if (is_pool(l.kind)) {
      outs[i] = maxpool3d(in(l, 0), detail::pool_params(l), d);
    } else if (l.kind == LayerKind::Relu) {
      outs[i] = relu(in(l, 0), d);
    } else if (l.kind == LayerKind::Concat) {
      outs[i] = concat(in(l, 0), in(l, 1));
    } else if (l.kind == LayerKind::TrilinearUp) {
      outs[i] = trilinear(in(l, 0), l.target);
    }
    // Free activations once no later layer reads them.
    for (std::size_t j = 0; j < i; ++j) {
      if (outs[j].v.empty()) continue;
      bool live = false;
      for (std::size_t k = i + 1; k < g.layers.size() && !live; ++k)
        for (auto id : g.layers[k].input_ids) live = live || id == static_cast<std::int64_t>(j);
      if (!live) outs[j] = Volume();
    }
  }
  return outs.back();
}

inline double dot(const Volume& a, const Tensor& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.v.size(); ++i) s += a.v[i] * static_cast<double>(b[i]);
  return s;
}

inline Tensor random_projection(const Shape& s, std::uint64_t seed) {
  Tensor r(s);
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  std::normal_distribution<float> normal(0.0f, 1.0f);
  for (auto& v : r.values()) v = normal(rng);
  return r;
}

using RefOp = std::function<Volume(const Volume&, Decisions*)>;

/// Checks an f32 gradient of sum(f(x) * r) for a fixed random r against
/// central differences of the f64 replica `ref`. `backward(dy)` returns the
/// analytic gradient with respect to x.
inline GradcheckReport gradcheck_op(const RefOp& ref, const std::function<Tensor(const Tensor&)>& backward,
                                    const Tensor& x, float eps, const GradcheckOptions& opt = {}) {
  const Tensor proj = random_projection(ref(Volume(x), nullptr).shape, opt.seed);
  const Tensor analytic = backward(proj);
  auto loss = [&](const Tensor& xi) {
    Probe p;
    p.value = dot(ref(Volume(xi), &p.decisions), proj);
    return p;
  };
  return gradcheck_scalar(std::function<Probe(const Tensor&)>(loss), analytic, x, eps, opt);
}

struct ParamCheck {
  std::string name;
  GradcheckReport report;
};

/// Checks backward() for every parameter tensor of `g` against the f64 graph
/// forward, on opt.max_coords sampled coordinates per tensor.
inline std::vector<ParamCheck> gradcheck_graph(const NetGraph& g, const Tensor& x, float eps,
                                               const GradcheckOptions& opt = {}) {
  const Tensor proj = random_projection(g.output_shape(), opt.seed);
  const ParamMap grads = v2v::backward(g, v2v::forward(g, x).cache, proj);
  std::vector<ParamCheck> out;
  ParamMap params = g.params;
  for (const auto& [name, value] : g.params) {
    auto loss = [&, name = name](const Tensor& t) {
      params.at(name) = t;
      Probe p;
      p.value = dot(forward(g, params, x, &p.decisions), proj);
      return p;
    };
    GradcheckOptions o = opt;
    o.seed = opt.seed + out.size();
    out.push_back({name, gradcheck_scalar(std::function<Probe(const Tensor&)>(loss), grads.at(name), value, eps, o)});
    params.at(name) = value;
  }
  return out;
}

}  // namespace v2v::reference
