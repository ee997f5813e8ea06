#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "v2v/conv.hpp"
#include "v2v/gradcheck.hpp"
#include "v2v/graph.hpp"
#include "v2v/layers.hpp"
#include "v2v/reference.hpp"

// Fixed small instances for checking every backward pass against finite
// differences of the f64 reference forward.
namespace v2v {

struct NamedCheck {
  std::string name;
  GradcheckReport report;
};

inline constexpr std::string_view kCheckedOps[] = {"conv3d", "deconv3d", "maxpool3d", "relu", "concat", "upsample", "graph"};

namespace detail {

inline Tensor normal_tensor(const Shape& s, std::mt19937_64& rng, float scale = 1.0f) {
  Tensor t(s);
  std::normal_distribution<float> n(0.0f, scale);
  for (auto& v : t.values()) v = n(rng);
  return t;
}

inline std::vector<NamedCheck> check_conv_like(bool deconv, std::mt19937_64& rng, float eps, const GradcheckOptions& opt) {
  namespace ref = reference;
  const auto g = deconv ? ConvGeometry::cube(4, 2, 1) : ConvGeometry::cube(3, 2, 1);
  const Tensor x = normal_tensor(Shape{2, 3, 4, 4}, rng);
  const Tensor w = normal_tensor(deconv ? Shape{2, 3, 4, 4, 4} : Shape{3, 2, 3, 3, 3}, rng, 0.3f);
  const Tensor b = normal_tensor(Shape{3}, rng);
  auto run = [&](const Tensor& xi, const Tensor& wi, const Tensor& bi) {
    return deconv ? ref::deconv3d(ref::Volume(xi), ref::Volume(wi), ref::Volume(bi), g)
                  : ref::conv3d(ref::Volume(xi), ref::Volume(wi), ref::Volume(bi), g);
  };
  auto grads = [&](const Tensor& dy) {
    return deconv ? deconv3d_backward(x, w, g, dy) : conv3d_backward(x, w, g, dy);
  };
  return {
      {"dx", ref::gradcheck_op([&](const ref::Volume& v, ref::Decisions*) { return run(ref::to_tensor(v), w, b); },
                               [&](const Tensor& dy) { return grads(dy).dx; }, x, eps, opt)},
      {"dw", ref::gradcheck_op([&](const ref::Volume& v, ref::Decisions*) { return run(x, ref::to_tensor(v), b); },
                               [&](const Tensor& dy) { return grads(dy).dw; }, w, eps, opt)},
      {"db", ref::gradcheck_op([&](const ref::Volume& v, ref::Decisions*) { return run(x, w, ref::to_tensor(v)); },
                               [&](const Tensor& dy) { return grads(dy).db; }, b, eps, opt)},
  };
}

}  // namespace detail

/// Tie-free V2V instance used for the whole-graph check: width 1/8, a
/// 3x16x16x16 flow input and small random biases so no ReLU input sits at 0.
inline NetGraph gradcheck_graph_instance(std::uint64_t seed, Tensor& input) {
  NetGraph g = build_v2v(TaskHead::flow(), Shape{3, 16, 16, 16}, 0.125);
  init_params(g, seed);
  std::mt19937_64 rng(seed ^ 0xb1a5ULL);
  for (auto& [name, t] : g.params)
    if (name.ends_with(".b")) t = detail::normal_tensor(t.shape(), rng, 0.1f);
  input = detail::normal_tensor(g.input_shape, rng);
  return g;
}

/// Checks one op. Single ops use step `eps` on every coordinate. The graph
/// samples `graph_coords` coordinates of every parameter tensor and shrinks
/// the step down to 1e-6 when it crosses a ReLU or pooling kink.
inline std::vector<NamedCheck> check_op_gradients(std::string_view op, std::uint64_t seed, float eps,
                                                  std::size_t graph_coords = 4) {
  namespace ref = reference;
  std::mt19937_64 rng(seed);
  GradcheckOptions opt;
  opt.seed = seed;
  if (op == "conv3d" || op == "deconv3d") return detail::check_conv_like(op == "deconv3d", rng, eps, opt);
  if (op == "maxpool3d") {
    // Distinct values 0.05 apart keep every window's winner unambiguous.
    Tensor x(Shape{2, 4, 4, 4});
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = static_cast<float>(i) * 0.05f;
    std::shuffle(x.values().begin(), x.values().end(), rng);
    const Pool3dParams p{{2, 2, 2}, {2, 2, 2}};
    const auto argmax = maxpool3d_forward(x, p).argmax;
    return {{"dx", ref::gradcheck_op([&](const ref::Volume& v, ref::Decisions* d) { return ref::maxpool3d(v, p, d); },
                                     [&](const Tensor& dy) { return maxpool3d_backward(argmax, dy, x.shape()); }, x, eps,
                                     opt)}};
  }
  if (op == "relu") {
    Tensor x = detail::normal_tensor(Shape{2, 3, 4, 4}, rng);
    for (auto& v : x.values())
      if (std::abs(v) < 0.1f) v = v < 0.0f ? -0.1f : 0.1f;
    return {{"dx", ref::gradcheck_op([](const ref::Volume& v, ref::Decisions* d) { return ref::relu(v, d); },
                                     [&](const Tensor& dy) { return relu_backward(x, dy); }, x, eps, opt)}};
  }
  if (op == "concat") {
    const Tensor a = detail::normal_tensor(Shape{2, 2, 3, 3}, rng);
    const Tensor b = detail::normal_tensor(Shape{3, 2, 3, 3}, rng);
    return {{"da", ref::gradcheck_op([&](const ref::Volume& v, ref::Decisions*) { return ref::concat(v, ref::Volume(b)); },
                                     [&](const Tensor& dy) { return concat_backward(dy, 2).first; }, a, eps, opt)},
            {"db", ref::gradcheck_op([&](const ref::Volume& v, ref::Decisions*) { return ref::concat(ref::Volume(a), v); },
                                     [&](const Tensor& dy) { return concat_backward(dy, 2).second; }, b, eps, opt)}};
  }
  if (op == "upsample") {
    const Tensor x = detail::normal_tensor(Shape{2, 2, 3, 3}, rng);
    const std::array<std::int64_t, 3> out{4, 7, 9};
    return {{"dx", ref::gradcheck_op([&](const ref::Volume& v, ref::Decisions*) { return ref::trilinear(v, out); },
                                     [&](const Tensor& dy) { return trilinear_upsample_backward(dy, x.shape()); }, x, eps,
                                     opt)}};
  }
  if (op == "graph") {
    Tensor x;
    const NetGraph g = gradcheck_graph_instance(seed, x);
    opt.max_coords = graph_coords;
    opt.min_eps = 1e-6f;
    std::vector<NamedCheck> out;
    for (auto& c : ref::gradcheck_graph(g, x, eps, opt)) out.push_back({c.name, c.report});
    return out;
  }
  throw Error(ErrorCode::InvalidConfig, "unknown op '" + std::string(op) + "'");
}

}  // namespace v2v
