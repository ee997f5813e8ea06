#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "v2v/conv.hpp"
#include "v2v/layers.hpp"
#include "v2v/tensor.hpp"
#include "v2v/tensor_io.hpp"

namespace v2v {

/// Output head: fixes the prediction channel count K, the input channel
/// count C and (elsewhere) the loss.
struct TaskHead {
  enum class Kind { Segmentation, Flow, Color };

  Kind kind = Kind::Segmentation;
  std::int64_t classes = 8;
  /// Flow targets are divided by alpha before the loss.
  float alpha = 15.0f;

  static TaskHead segmentation(std::int64_t k) { return {Kind::Segmentation, k, 15.0f}; }
  static TaskHead flow(float alpha = 15.0f) { return {Kind::Flow, 2, alpha}; }
  static TaskHead color() { return {Kind::Color, 3, 15.0f}; }

  std::int64_t output_channels() const noexcept {
    switch (kind) {
      case Kind::Segmentation: return classes;
      case Kind::Flow: return 2;
      case Kind::Color: return 3;
    }
    return 0;
  }
  /// Coloring consumes grayscale video.
  std::int64_t input_channels() const noexcept { return kind == Kind::Color ? 1 : 3; }

  std::string name() const {
    switch (kind) {
      case Kind::Segmentation: return "seg";
      case Kind::Flow: return "flow";
      case Kind::Color: return "color";
    }
    return "?";
  }
};

inline TaskHead::Kind parse_task_kind(std::string_view s) {
  if (s == "seg" || s == "segmentation") return TaskHead::Kind::Segmentation;
  if (s == "flow") return TaskHead::Kind::Flow;
  if (s == "color" || s == "coloring") return TaskHead::Kind::Color;
  throw Error(ErrorCode::InvalidConfig, "unknown task '" + std::string(s) + "' (expected seg, flow or color)");
}

enum class LayerKind {
  Conv3d,
  Deconv3d,
  MaxPool3d,
  Relu,
  Concat,
  TrilinearUp,
  Conv2dPerFrame,
  Deconv2dPerFrame,
  MaxPool2dPerFrame,
};

inline const char* to_string(LayerKind k) {
  switch (k) {
    case LayerKind::Conv3d: return "conv3d";
    case LayerKind::Deconv3d: return "deconv3d";
    case LayerKind::MaxPool3d: return "maxpool3d";
    case LayerKind::Relu: return "relu";
    case LayerKind::Concat: return "concat";
    case LayerKind::TrilinearUp: return "trilinear_up";
    case LayerKind::Conv2dPerFrame: return "conv2d-per-frame";
    case LayerKind::Deconv2dPerFrame: return "deconv2d-per-frame";
    case LayerKind::MaxPool2dPerFrame: return "maxpool2d-per-frame";
  }
  return "?";
}

inline bool is_conv(LayerKind k) { return k == LayerKind::Conv3d || k == LayerKind::Conv2dPerFrame; }
inline bool is_deconv(LayerKind k) { return k == LayerKind::Deconv3d || k == LayerKind::Deconv2dPerFrame; }
inline bool is_pool(LayerKind k) { return k == LayerKind::MaxPool3d || k == LayerKind::MaxPool2dPerFrame; }
inline bool has_params(LayerKind k) { return is_conv(k) || is_deconv(k); }

/// Name given to the implicit graph input.
inline constexpr std::string_view kInputName = "data";

struct LayerSpec {
  std::string name;
  LayerKind kind = LayerKind::Relu;
  ConvGeometry geometry;
  std::int64_t in_channels = 0;
  std::int64_t out_channels = 0;
  std::vector<std::string> inputs;
  /// Output grid of a trilinear_up layer.
  std::array<std::int64_t, 3> target{};

  // Filled in at build time.
  std::vector<std::int64_t> input_ids;  // -1 is the graph input
  Shape out_shape;
};

enum class Architecture { V2V, V2V2D, Conv3bUp, Conv4bUp, Conv5bUp };

inline const char* to_string(Architecture a) {
  switch (a) {
    case Architecture::V2V: return "v2v";
    case Architecture::V2V2D: return "v2v2d";
    case Architecture::Conv3bUp: return "conv3b_up";
    case Architecture::Conv4bUp: return "conv4b_up";
    case Architecture::Conv5bUp: return "conv5b_up";
  }
  return "?";
}

inline Architecture parse_architecture(std::string_view s) {
  for (auto a : {Architecture::V2V, Architecture::V2V2D, Architecture::Conv3bUp, Architecture::Conv4bUp,
                 Architecture::Conv5bUp})
    if (s == to_string(a)) return a;
  throw Error(ErrorCode::InvalidConfig, "unknown architecture '" + std::string(s) + "'");
}

enum class BaselineLevel { Conv3b, Conv4b, Conv5b };

/// Filter counts per layer. Conv3a/3b share `conv3`, and likewise for 4 and 5.
struct ChannelPlan {
  std::int64_t conv1a = 64;
  std::int64_t conv2a = 128;
  std::int64_t conv3 = 256;
  std::int64_t conv4 = 512;
  std::int64_t conv5 = 512;
  std::int64_t deconv5 = 256;
  std::int64_t conv4c = 256;
  std::int64_t deconv4 = 128;
  std::int64_t conv3c = 128;
  std::int64_t deconv3 = 64;

  /// Every width multiplied by `mult` and rounded up.
  static ChannelPlan scaled(double mult) {
    if (!(mult > 0.0)) throw Error(ErrorCode::InvalidConfig, "width multiplier must be positive");
    auto s = [mult](std::int64_t c) { return std::max<std::int64_t>(1, static_cast<std::int64_t>(std::ceil(c * mult - 1e-9))); };
    ChannelPlan p;
    return {s(p.conv1a), s(p.conv2a), s(p.conv3),   s(p.conv4),   s(p.conv5),
            s(p.deconv5), s(p.conv4c), s(p.deconv4), s(p.conv3c), s(p.deconv3)};
  }

  friend bool operator==(const ChannelPlan&, const ChannelPlan&) = default;
};

class NetGraph {
 public:
  std::vector<LayerSpec> layers;
  ParamMap params;
  TaskHead head;
  Shape input_shape;
  Architecture architecture = Architecture::V2V;
  ChannelPlan plan;

  std::int64_t index_of(std::string_view name) const {
    for (std::size_t i = 0; i < layers.size(); ++i)
      if (layers[i].name == name) return static_cast<std::int64_t>(i);
    throw Error(ErrorCode::ShapePropagationFailure, "no layer named '" + std::string(name) + "'");
  }
  const LayerSpec& layer(std::string_view name) const { return layers[static_cast<std::size_t>(index_of(name))]; }
  bool has_layer(std::string_view name) const {
    return std::any_of(layers.begin(), layers.end(), [&](const LayerSpec& l) { return l.name == name; });
  }

  const Shape& output_shape() const { return layers.back().out_shape; }

  std::int64_t parameter_count() const {
    std::int64_t n = 0;
    for (const auto& [name, t] : params) n += static_cast<std::int64_t>(t.size());
    return n;
  }
};

inline std::string weight_name(const std::string& layer) { return layer + ".w"; }
inline std::string bias_name(const std::string& layer) { return layer + ".b"; }

namespace detail {

inline Pool3dParams pool_params(const LayerSpec& l) { return {l.geometry.kernel, l.geometry.stride}; }

inline Shape infer_shape(const LayerSpec& l, const std::vector<Shape>& in) {
  auto grid = [](const Shape& s) { return std::array<std::int64_t, 3>{s[1], s[2], s[3]}; };
  const Shape& x = in.at(0);
  if (is_conv(l.kind)) {
    if (x[0] != l.in_channels) throw Error(ErrorCode::ChannelMismatch, "expects " + std::to_string(l.in_channels) + " channels, got " + x.str());
    const auto o = conv_out_dims(grid(x), l.geometry);
    return Shape{l.out_channels, o[0], o[1], o[2]};
  }
  if (is_deconv(l.kind)) {
    if (x[0] != l.in_channels) throw Error(ErrorCode::ChannelMismatch, "expects " + std::to_string(l.in_channels) + " channels, got " + x.str());
    const auto o = deconv_out_dims(grid(x), l.geometry);
    return Shape{l.out_channels, o[0], o[1], o[2]};
  }
  if (is_pool(l.kind)) {
    const auto o = pool_out_dims(grid(x), pool_params(l));
    return Shape{x[0], o[0], o[1], o[2]};
  }
  switch (l.kind) {
    case LayerKind::Relu: return x;
    case LayerKind::Concat: {
      const Shape& y = in.at(1);
      if (x[1] != y[1] || x[2] != y[2] || x[3] != y[3])
        throw Error(ErrorCode::SpatialMismatch, x.str() + " vs " + y.str());
      return Shape{x[0] + y[0], x[1], x[2], x[3]};
    }
    case LayerKind::TrilinearUp:
      if (l.target[0] < x[1] || l.target[1] < x[2] || l.target[2] < x[3])
        throw Error(ErrorCode::DownsampleRequested, x.str());
      return Shape{x[0], l.target[0], l.target[1], l.target[2]};
    default: break;
  }
  throw Error(ErrorCode::ShapePropagationFailure, "unhandled layer kind");
}

class GraphBuilder {
 public:
  GraphBuilder(Architecture arch, TaskHead head, Shape input_shape, ChannelPlan plan) {
    g_.architecture = arch;
    g_.head = head;
    g_.input_shape = input_shape;
    g_.plan = plan;
    flat_ = arch == Architecture::V2V2D;
  }

  // Geometry helpers; per-frame variants force the temporal kernel/stride/pad to 1/1/0.
  ConvGeometry geom(std::array<std::int64_t, 3> k, std::array<std::int64_t, 3> s, std::array<std::int64_t, 3> p) const {
    if (flat_) {
      k[0] = 1;
      s[0] = 1;
      p[0] = 0;
    }
    return {k, s, p};
  }

  std::string conv(const std::string& name, const std::string& input, std::int64_t out, bool relu = true) {
    LayerSpec l;
    l.name = name;
    l.kind = flat_ ? LayerKind::Conv2dPerFrame : LayerKind::Conv3d;
    l.geometry = geom({3, 3, 3}, {1, 1, 1}, {1, 1, 1});
    l.in_channels = channels(input);
    l.out_channels = out;
    l.inputs = {input};
    add(std::move(l));
    return relu ? this->relu(name) : name;
  }

  std::string deconv(const std::string& name, const std::string& input, std::int64_t out, ConvGeometry g) {
    LayerSpec l;
    l.name = name;
    l.kind = flat_ ? LayerKind::Deconv2dPerFrame : LayerKind::Deconv3d;
    l.geometry = geom(g.kernel, g.stride, g.pad);
    l.in_channels = channels(input);
    l.out_channels = out;
    l.inputs = {input};
    add(std::move(l));
    return relu(name);
  }

  std::string pool(const std::string& name, const std::string& input, std::array<std::int64_t, 3> k) {
    LayerSpec l;
    l.name = name;
    l.kind = flat_ ? LayerKind::MaxPool2dPerFrame : LayerKind::MaxPool3d;
    l.geometry = geom(k, k, {0, 0, 0});
    l.inputs = {input};
    add(std::move(l));
    return name;
  }

  std::string relu(const std::string& input) {
    LayerSpec l;
    l.name = input + "_relu";
    l.kind = LayerKind::Relu;
    l.inputs = {input};
    add(std::move(l));
    return input + "_relu";
  }

  std::string concat(const std::string& name, const std::string& a, const std::string& b) {
    LayerSpec l;
    l.name = name;
    l.kind = LayerKind::Concat;
    l.inputs = {a, b};
    add(std::move(l));
    return name;
  }

  std::string upsample(const std::string& name, const std::string& input, std::array<std::int64_t, 3> target) {
    LayerSpec l;
    l.name = name;
    l.kind = LayerKind::TrilinearUp;
    l.inputs = {input};
    l.target = target;
    add(std::move(l));
    return name;
  }

  const Shape& shape_of(const std::string& name) const {
    if (name == kInputName) return g_.input_shape;
    return g_.layers[static_cast<std::size_t>(g_.index_of(name))].out_shape;
  }

  void require_same_grid(const std::string& a, const std::string& b) const {
    const Shape& x = shape_of(a);
    const Shape& y = shape_of(b);
    if (x[1] != y[1] || x[2] != y[2] || x[3] != y[3])
      throw Error(ErrorCode::ShapePropagationFailure,
                  a + " grid " + x.str() + " does not match skip partner " + b + " grid " + y.str());
  }

  NetGraph finish() && {
    for (const auto& l : g_.layers) {
      if (!has_params(l.kind)) continue;
      const Shape w = is_conv(l.kind)
                          ? Shape{l.out_channels, l.in_channels, l.geometry.kernel[0], l.geometry.kernel[1], l.geometry.kernel[2]}
                          : Shape{l.in_channels, l.out_channels, l.geometry.kernel[0], l.geometry.kernel[1], l.geometry.kernel[2]};
      g_.params.emplace(weight_name(l.name), Tensor(w));
      g_.params.emplace(bias_name(l.name), Tensor(Shape{l.out_channels}));
    }
    return std::move(g_);
  }

 private:
  std::int64_t channels(const std::string& name) const { return shape_of(name)[0]; }

  void add(LayerSpec l) {
    if (l.name == kInputName || g_.has_layer(l.name))
      throw Error(ErrorCode::ShapePropagationFailure, "duplicate layer name '" + l.name + "'");
    std::vector<Shape> in;
    for (const auto& src : l.inputs) {
      // Inputs must already exist, which also keeps the layer list topologically ordered.
      l.input_ids.push_back(src == kInputName ? -1 : g_.index_of(src));
      in.push_back(shape_of(src));
    }
    try {
      l.out_shape = infer_shape(l, in);
    } catch (const Error& e) {
      throw Error(ErrorCode::ShapePropagationFailure, "layer " + l.name + ": " + e.what());
    }
    g_.layers.push_back(std::move(l));
  }

  NetGraph g_;
  bool flat_ = false;
};

inline void check_input(const TaskHead& head, const Shape& input, std::int64_t l_div, std::int64_t hw_div) {
  if (input.rank() != 4) throw Error(ErrorCode::IndivisibleInputShape, "input must be (C,L,H,W), got " + input.str());
  if (head.kind == TaskHead::Kind::Segmentation && head.classes < 1)
    throw Error(ErrorCode::InvalidConfig, "segmentation needs at least one class");
  if (input[1] % l_div != 0 || input[2] % hw_div != 0 || input[3] % hw_div != 0)
    throw Error(ErrorCode::IndivisibleInputShape, input.str() + " needs L divisible by " + std::to_string(l_div) +
                                                      " and H, W divisible by " + std::to_string(hw_div));
}

/// Encoder up to and including `last` ("conv3b", "conv4b" or "conv5b");
/// returns the name of the final activation.
inline std::string build_encoder(GraphBuilder& b, const ChannelPlan& p, std::string_view last) {
  std::string x = b.conv("conv1a", std::string(kInputName), p.conv1a);
  x = b.pool("pool1", x, {1, 2, 2});
  x = b.conv("conv2a", x, p.conv2a);
  x = b.pool("pool2", x, {2, 2, 2});
  x = b.conv("conv3a", x, p.conv3);
  x = b.conv("conv3b", x, p.conv3);
  if (last == "conv3b") return x;
  x = b.pool("pool3", x, {2, 2, 2});
  x = b.conv("conv4a", x, p.conv4);
  x = b.conv("conv4b", x, p.conv4);
  if (last == "conv4b") return x;
  x = b.pool("pool4", x, {2, 2, 2});
  x = b.conv("conv5a", x, p.conv5);
  x = b.conv("conv5b", x, p.conv5);
  return x;
}

inline const ConvGeometry kDeconvX2{{4, 4, 4}, {2, 2, 2}, {1, 1, 1}};
// x2 temporally, x4 spatially: 8x28x28 -> 16x112x112.
inline const ConvGeometry kDeconv3{{4, 8, 8}, {2, 4, 4}, {1, 2, 2}};

inline NetGraph build_encoder_decoder(Architecture arch, const TaskHead& head, const Shape& input,
                                      const ChannelPlan& p) {
  GraphBuilder b(arch, head, input, p);
  build_encoder(b, p, "conv5b");
  std::string up = b.deconv("deconv5", "conv5b_relu", p.deconv5, kDeconvX2);
  std::string skip = b.conv("conv4c", "conv4b_relu", p.conv4c);
  b.require_same_grid(up, skip);
  std::string x = b.concat("concat5", up, skip);
  up = b.deconv("deconv4", x, p.deconv4, kDeconvX2);
  skip = b.conv("conv3c", "conv3b_relu", p.conv3c);
  b.require_same_grid(up, skip);
  x = b.concat("concat4", up, skip);
  x = b.deconv("deconv3", x, p.deconv3, kDeconv3);
  b.conv("conv_pre", x, head.output_channels(), false);
  return std::move(b).finish();
}

}  // namespace detail

/// Builds any supported architecture from an explicit channel plan.
inline NetGraph build_network(Architecture arch, const TaskHead& head, const Shape& input, const ChannelPlan& plan) {
  NetGraph g;
  switch (arch) {
    case Architecture::V2V:
      detail::check_input(head, input, 8, 16);
      g = detail::build_encoder_decoder(arch, head, input, plan);
      break;
    case Architecture::V2V2D:
      detail::check_input(head, input, 1, 16);
      g = detail::build_encoder_decoder(arch, head, input, plan);
      break;
    case Architecture::Conv3bUp:
    case Architecture::Conv4bUp:
    case Architecture::Conv5bUp: {
      const char* last = arch == Architecture::Conv3bUp ? "conv3b" : arch == Architecture::Conv4bUp ? "conv4b" : "conv5b";
      const std::int64_t l_div = arch == Architecture::Conv3bUp ? 2 : arch == Architecture::Conv4bUp ? 4 : 8;
      detail::check_input(head, input, l_div, 2 * l_div);
      detail::GraphBuilder b(arch, head, input, plan);
      const std::string feat = detail::build_encoder(b, plan, last);
      const std::string pred = b.conv("conv_pre", feat, head.output_channels(), false);
      b.upsample("upsample", pred, {input[1], input[2], input[3]});
      g = std::move(b).finish();
      break;
    }
  }
  const Shape& out = g.output_shape();
  if (!(out == Shape{head.output_channels(), input[1], input[2], input[3]}))
    throw Error(ErrorCode::ShapePropagationFailure, "prediction " + out.str() + " does not match input grid");
  return g;
}

inline NetGraph build_v2v(const TaskHead& head, const Shape& input, double width_mult = 1.0) {
  return build_network(Architecture::V2V, head, input, ChannelPlan::scaled(width_mult));
}

inline NetGraph build_baseline_up(BaselineLevel level, const TaskHead& head, const Shape& input,
                                  double width_mult = 1.0) {
  const Architecture arch = level == BaselineLevel::Conv3b   ? Architecture::Conv3bUp
                            : level == BaselineLevel::Conv4b ? Architecture::Conv4bUp
                                                             : Architecture::Conv5bUp;
  return build_network(arch, head, input, ChannelPlan::scaled(width_mult));
}

inline NetGraph build_2d_v2v(const TaskHead& head, const Shape& input, double width_mult = 1.0) {
  return build_network(Architecture::V2V2D, head, input, ChannelPlan::scaled(width_mult));
}

// ---------------------------------------------------------------------------
// Forward / backward

struct ForwardCache {
  Tensor input;
  std::vector<Tensor> outputs;
  std::vector<std::vector<std::int64_t>> argmax;
};

struct ForwardResult {
  Tensor prediction;
  ForwardCache cache;
};

inline ForwardResult forward(const NetGraph& g, const Tensor& x) {
  if (!(x.shape() == g.input_shape))
    throw Error(ErrorCode::ShapeMismatch, "input " + x.shape().str() + " but graph expects " + g.input_shape.str());
  ForwardResult r;
  r.cache.input = x;
  r.cache.outputs.resize(g.layers.size());
  r.cache.argmax.resize(g.layers.size());
  auto in = [&](const LayerSpec& l, std::size_t k) -> const Tensor& {
    const auto id = l.input_ids[k];
    return id < 0 ? r.cache.input : r.cache.outputs[static_cast<std::size_t>(id)];
  };
  for (std::size_t i = 0; i < g.layers.size(); ++i) {
    const LayerSpec& l = g.layers[i];
    Tensor& out = r.cache.outputs[i];
    if (is_conv(l.kind)) {
      out = conv3d_forward(in(l, 0), g.params.at(weight_name(l.name)), g.params.at(bias_name(l.name)), l.geometry);
    } else if (is_deconv(l.kind)) {
      out = deconv3d_forward(in(l, 0), g.params.at(weight_name(l.name)), g.params.at(bias_name(l.name)), l.geometry);
    } else if (is_pool(l.kind)) {
      auto p = maxpool3d_forward(in(l, 0), detail::pool_params(l));
      out = std::move(p.y);
      r.cache.argmax[i] = std::move(p.argmax);
    } else if (l.kind == LayerKind::Relu) {
      out = relu_forward(in(l, 0));
    } else if (l.kind == LayerKind::Concat) {
      out = concat_channels(in(l, 0), in(l, 1));
    } else if (l.kind == LayerKind::TrilinearUp) {
      out = trilinear_upsample(in(l, 0), l.target);
    }
  }
  r.prediction = r.cache.outputs.back();
  return r;
}

/// Gradients of sum(prediction * dprediction) for every parameter. Layers
/// with several consumers accumulate in reverse layer order.
inline ParamMap backward(const NetGraph& g, const ForwardCache& cache, const Tensor& dprediction) {
  if (cache.outputs.size() != g.layers.size()) throw Error(ErrorCode::ShapeMismatch, "cache does not belong to graph");
  if (!(dprediction.shape() == g.output_shape()))
    throw Error(ErrorCode::ShapeMismatch, "prediction gradient " + dprediction.shape().str());
  ParamMap grads;
  for (const auto& [name, t] : g.params) grads.emplace(name, Tensor(t.shape()));

  std::vector<Tensor> dout(g.layers.size());
  dout.back() = dprediction;
  auto input_of = [&](const LayerSpec& l, std::size_t k) -> const Tensor& {
    const auto id = l.input_ids[k];
    return id < 0 ? cache.input : cache.outputs[static_cast<std::size_t>(id)];
  };
  auto send = [&](const LayerSpec& l, std::size_t k, Tensor&& d) {
    const auto id = l.input_ids[k];
    if (id < 0) return;
    Tensor& slot = dout[static_cast<std::size_t>(id)];
    if (slot.empty()) slot = std::move(d);
    else add_inplace(slot, d);
  };

  for (std::size_t i = g.layers.size(); i-- > 0;) {
    const LayerSpec& l = g.layers[i];
    if (dout[i].empty()) continue;
    const Tensor& dy = dout[i];
    const bool wants_dx = l.input_ids[0] >= 0;
    if (is_conv(l.kind) || is_deconv(l.kind)) {
      const Tensor& w = g.params.at(weight_name(l.name));
      ConvGrads cg = is_conv(l.kind) ? conv3d_backward(input_of(l, 0), w, l.geometry, dy, wants_dx)
                                     : deconv3d_backward(input_of(l, 0), w, l.geometry, dy);
      grads.at(weight_name(l.name)) = std::move(cg.dw);
      grads.at(bias_name(l.name)) = std::move(cg.db);
      if (wants_dx) send(l, 0, std::move(cg.dx));
    } else if (is_pool(l.kind)) {
      send(l, 0, maxpool3d_backward(cache.argmax[i], dy, input_of(l, 0).shape()));
    } else if (l.kind == LayerKind::Relu) {
      send(l, 0, relu_backward(input_of(l, 0), dy));
    } else if (l.kind == LayerKind::Concat) {
      auto [da, db] = concat_backward(dy, input_of(l, 0).dim(0));
      send(l, 0, std::move(da));
      send(l, 1, std::move(db));
    } else if (l.kind == LayerKind::TrilinearUp) {
      send(l, 0, trilinear_upsample_backward(dy, input_of(l, 0).shape()));
    }
    dout[i] = Tensor();
  }
  return grads;
}

// ---------------------------------------------------------------------------
// Initialization and checkpoint binding

enum class InitScheme { He, HeTrilinearDeconv };

inline InitScheme parse_init_scheme(std::string_view s) {
  if (s == "he") return InitScheme::He;
  if (s == "he+trilinear-deconv" || s == "he_trilinear") return InitScheme::HeTrilinearDeconv;
  throw Error(ErrorCode::InvalidConfig, "unknown init scheme '" + std::string(s) + "'");
}

/// 1-D linear-interpolation filter for an upsampling deconvolution of the
/// given kernel size.
inline std::vector<float> interpolation_filter(std::int64_t k) {
  const std::int64_t factor = (k + 1) / 2;
  const double center = (k % 2 == 1) ? static_cast<double>(factor - 1) : static_cast<double>(factor) - 0.5;
  std::vector<float> f(static_cast<std::size_t>(k));
  for (std::int64_t i = 0; i < k; ++i)
    f[static_cast<std::size_t>(i)] = static_cast<float>(1.0 - std::abs(static_cast<double>(i) - center) / static_cast<double>(factor));
  return f;
}

/// Fills a deconv weight tensor [in, out, kL, kH, kW] with the separable
/// interpolation filter on matching (c, c) channel pairs and zero elsewhere.
inline void fill_interpolation_deconv(Tensor& w) {
  w.fill(0.0f);
  const auto fl = interpolation_filter(w.dim(2));
  const auto fh = interpolation_filter(w.dim(3));
  const auto fw = interpolation_filter(w.dim(4));
  for (std::int64_t c = 0; c < std::min(w.dim(0), w.dim(1)); ++c)
    for (std::int64_t a = 0; a < w.dim(2); ++a)
      for (std::int64_t b = 0; b < w.dim(3); ++b)
        for (std::int64_t d = 0; d < w.dim(4); ++d)
          w(c, c, a, b, d) = fl[static_cast<std::size_t>(a)] * fh[static_cast<std::size_t>(b)] * fw[static_cast<std::size_t>(d)];
}

/// Conv weights ~ N(0, sqrt(2 / fan_in)), biases zero. Deconv fan-in counts
/// the kernel taps that reach one output voxel (kernel volume / stride volume).
inline void init_params(NetGraph& g, std::uint64_t seed, InitScheme scheme = InitScheme::He) {
  std::mt19937_64 rng(seed);
  for (const auto& l : g.layers) {
    if (!has_params(l.kind)) continue;
    Tensor& w = g.params.at(weight_name(l.name));
    g.params.at(bias_name(l.name)).fill(0.0f);
    if (is_deconv(l.kind) && scheme == InitScheme::HeTrilinearDeconv) {
      fill_interpolation_deconv(w);
      continue;
    }
    double fan_in = static_cast<double>(l.in_channels * l.geometry.kernel_volume());
    if (is_deconv(l.kind))
      fan_in /= static_cast<double>(l.geometry.stride[0] * l.geometry.stride[1] * l.geometry.stride[2]);
    std::normal_distribution<float> normal(0.0f, static_cast<float>(std::sqrt(2.0 / fan_in)));
    for (auto& v : w.values()) v = normal(rng);
  }
}

struct BindReport {
  std::vector<std::string> loaded;
  /// Graph parameters left at their initialized values.
  std::vector<std::string> not_loaded;
  /// File entries that match no graph parameter.
  std::vector<std::string> unused;
};

/// Copies entries into graph parameters by name. A name match with different
/// dims is an error; everything else is reported.
inline BindReport bind_checkpoint(NetGraph& g, const ParamMap& entries) {
  for (const auto& [name, t] : entries) {
    auto it = g.params.find(name);
    if (it != g.params.end() && !(it->second.shape() == t.shape()))
      throw Error(ErrorCode::ShapeMismatch,
                  "entry '" + name + "' has dims " + t.shape().str() + ", graph expects " + it->second.shape().str());
  }
  BindReport rep;
  for (auto& [name, t] : g.params) {
    auto it = entries.find(name);
    if (it == entries.end()) {
      rep.not_loaded.push_back(name);
    } else {
      t = it->second;
      rep.loaded.push_back(name);
    }
  }
  for (const auto& [name, t] : entries)
    if (!g.params.contains(name)) rep.unused.push_back(name);
  return rep;
}

/// What a checkpoint's parameter shapes say about the network that wrote it.
struct InferredModel {
  Architecture architecture = Architecture::V2V;
  ChannelPlan plan;
  std::int64_t input_channels = 3;
  std::int64_t output_channels = 0;
};

inline InferredModel infer_model(const ParamMap& params) {
  auto dim = [&](const std::string& name, std::size_t axis) -> std::int64_t {
    auto it = params.find(name);
    if (it == params.end()) throw Error(ErrorCode::ShapeMismatch, "checkpoint lacks '" + name + "'");
    if (it->second.rank() <= axis) throw Error(ErrorCode::ShapeMismatch, "entry '" + name + "' has too few dims");
    return it->second.dim(axis);
  };
  InferredModel m;
  m.input_channels = dim("conv1a.w", 1);
  m.output_channels = dim("conv_pre.w", 0);
  const bool flat = dim("conv1a.w", 2) == 1;
  m.plan.conv1a = dim("conv1a.w", 0);
  m.plan.conv2a = dim("conv2a.w", 0);
  m.plan.conv3 = dim("conv3a.w", 0);
  if (params.contains("deconv5.w")) {
    m.architecture = flat ? Architecture::V2V2D : Architecture::V2V;
    m.plan.conv4 = dim("conv4a.w", 0);
    m.plan.conv5 = dim("conv5a.w", 0);
    m.plan.deconv5 = dim("deconv5.w", 1);
    m.plan.conv4c = dim("conv4c.w", 0);
    m.plan.deconv4 = dim("deconv4.w", 1);
    m.plan.conv3c = dim("conv3c.w", 0);
    m.plan.deconv3 = dim("deconv3.w", 1);
  } else if (params.contains("conv5b.w")) {
    m.architecture = Architecture::Conv5bUp;
    m.plan.conv4 = dim("conv4a.w", 0);
    m.plan.conv5 = dim("conv5a.w", 0);
  } else if (params.contains("conv4b.w")) {
    m.architecture = Architecture::Conv4bUp;
    m.plan.conv4 = dim("conv4a.w", 0);
  } else {
    m.architecture = Architecture::Conv3bUp;
  }
  return m;
}

}  // namespace v2v
