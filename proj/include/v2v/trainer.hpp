#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "v2v/config.hpp"
#include "v2v/dataset.hpp"
#include "v2v/graph.hpp"
#include "v2v/losses.hpp"
#include "v2v/synth.hpp"
#include "v2v/tensor.hpp"
#include "v2v/tensor_io.hpp"

namespace v2v {

enum class CropPolicy { Center, Random };

struct TrainConfig {
  TaskHead task = TaskHead::segmentation(8);
  Architecture architecture = Architecture::V2V;
  double width_mult = 1.0;
  InitScheme init_scheme = InitScheme::He;
  std::int64_t frames = 16, height = 112, width = 112;

  float base_lr = 1e-4f;
  std::int64_t decay_every = 30000;
  float decay_factor = 10.0f;
  std::int64_t max_iters = 100000;
  float momentum = 0.9f;
  float weight_decay = 0.0f;
  /// Global gradient-norm cap; 0 disables clipping.
  float grad_clip = 0.0f;
  std::uint64_t seed = 1;
  HuberVariant huber = HuberVariant::Literal;

  std::int64_t clip_stride_train = 1;
  std::int64_t clip_stride_eval = 16;
  CropPolicy crop = CropPolicy::Center;

  std::filesystem::path manifest;
  std::filesystem::path init_checkpoint;
  std::filesystem::path checkpoint = "model.ckpt";
  std::filesystem::path log = "train_log.csv";
  /// Extra checkpoints every N iterations; 0 writes only the final one.
  std::int64_t checkpoint_every = 0;

  Shape input_shape() const { return Shape{task.input_channels(), frames, height, width}; }

  void validate() const {
    if (!(base_lr > 0.0f)) throw Error(ErrorCode::InvalidConfig, "base_lr must be positive");
    if (decay_every < 1) throw Error(ErrorCode::InvalidConfig, "decay_every must be positive");
    if (!(decay_factor > 0.0f)) throw Error(ErrorCode::InvalidConfig, "decay_factor must be positive");
    if (max_iters < 1) throw Error(ErrorCode::InvalidConfig, "max_iters must be positive");
    if (!(momentum >= 0.0f && momentum < 1.0f)) throw Error(ErrorCode::InvalidConfig, "momentum must be in [0,1)");
    if (clip_stride_train < 1 || clip_stride_eval < 1) throw Error(ErrorCode::InvalidConfig, "clip strides must be >= 1");
    if (checkpoint_every < 0) throw Error(ErrorCode::InvalidConfig, "checkpoint_every must be >= 0");
    if (!(width_mult > 0.0)) throw Error(ErrorCode::InvalidConfig, "width_mult must be positive");
    if (!(task.alpha > 0.0f)) throw Error(ErrorCode::InvalidConfig, "alpha must be positive");
  }
};

/// Applies config keys on top of `cfg`. Unknown keys are rejected.
inline void apply_config(TrainConfig& cfg, const KeyValues& kv) {
  std::optional<std::int64_t> classes;
  std::optional<float> alpha;
  for (const auto& [k, v] : kv) {
    if (k == "task") cfg.task.kind = parse_task_kind(v);
    else if (k == "classes") classes = parse_number<std::int64_t>(k, v);
    else if (k == "alpha") alpha = parse_number<float>(k, v);
    else if (k == "architecture") cfg.architecture = parse_architecture(v);
    else if (k == "width_mult") cfg.width_mult = parse_number<double>(k, v);
    else if (k == "init_scheme") cfg.init_scheme = parse_init_scheme(v);
    else if (k == "frames") cfg.frames = parse_number<std::int64_t>(k, v);
    else if (k == "height") cfg.height = parse_number<std::int64_t>(k, v);
    else if (k == "width") cfg.width = parse_number<std::int64_t>(k, v);
    else if (k == "base_lr") cfg.base_lr = parse_number<float>(k, v);
    else if (k == "decay_every") cfg.decay_every = parse_number<std::int64_t>(k, v);
    else if (k == "decay_factor") cfg.decay_factor = parse_number<float>(k, v);
    else if (k == "max_iters") cfg.max_iters = parse_number<std::int64_t>(k, v);
    else if (k == "momentum") cfg.momentum = parse_number<float>(k, v);
    else if (k == "weight_decay") cfg.weight_decay = parse_number<float>(k, v);
    else if (k == "grad_clip") cfg.grad_clip = parse_number<float>(k, v);
    else if (k == "seed") cfg.seed = parse_number<std::uint64_t>(k, v);
    else if (k == "huber") {
      if (v == "literal") cfg.huber = HuberVariant::Literal;
      else if (v == "smooth") cfg.huber = HuberVariant::Smooth;
      else throw Error(ErrorCode::InvalidConfig, "huber must be literal or smooth");
    } else if (k == "clip_stride_train") cfg.clip_stride_train = parse_number<std::int64_t>(k, v);
    else if (k == "clip_stride_eval") cfg.clip_stride_eval = parse_number<std::int64_t>(k, v);
    else if (k == "crop") {
      if (v == "center") cfg.crop = CropPolicy::Center;
      else if (v == "random") cfg.crop = CropPolicy::Random;
      else throw Error(ErrorCode::InvalidConfig, "crop must be center or random");
    } else if (k == "manifest") cfg.manifest = v;
    else if (k == "init_checkpoint") cfg.init_checkpoint = v;
    else if (k == "checkpoint") cfg.checkpoint = v;
    else if (k == "log") cfg.log = v;
    else if (k == "checkpoint_every") cfg.checkpoint_every = parse_number<std::int64_t>(k, v);
    else throw Error(ErrorCode::InvalidConfig, "unknown config key '" + k + "'");
  }
  if (cfg.task.kind == TaskHead::Kind::Segmentation) cfg.task.classes = classes.value_or(cfg.task.classes);
  else cfg.task.classes = cfg.task.output_channels();
  if (alpha) cfg.task.alpha = *alpha;
}

/// base_lr / decay_factor^floor(iter / decay_every), as one division by the
/// power. Powers of 10 up to 1e22 are exact in double, so the schedule is a
/// single correctly rounded quotient.
inline float lr_at(const TrainConfig& cfg, std::int64_t iter) {
  const auto steps = iter / cfg.decay_every;
  double denom = 1.0;
  for (std::int64_t i = 0; i < steps; ++i) denom *= cfg.decay_factor;
  return static_cast<float>(static_cast<double>(cfg.base_lr) / denom);
}

/// v <- momentum * v - lr * g; p <- p + v.
inline void sgd_step(ParamMap& params, const ParamMap& grads, float lr, float momentum, ParamMap& velocity) {
  for (auto& [name, p] : params) {
    const auto git = grads.find(name);
    if (git == grads.end()) continue;
    const Tensor& g = git->second;
    if (!(g.shape() == p.shape())) throw Error(ErrorCode::ShapeMismatch, "gradient for '" + name + "'");
    auto [vit, fresh] = velocity.try_emplace(name, p.shape());
    Tensor& v = vit->second;
    for (std::size_t i = 0; i < p.size(); ++i) {
      v[i] = momentum * v[i] - lr * g[i];
      p[i] += v[i];
    }
  }
}

/// Start/end frames of every clip_len window at the given stride.
inline std::vector<std::pair<std::int64_t, std::int64_t>> sample_clips(std::int64_t video_len, std::int64_t stride,
                                                                       std::int64_t clip_len = 16) {
  if (stride < 1 || clip_len < 1) throw Error(ErrorCode::InvalidConfig, "stride and clip length must be >= 1");
  std::vector<std::pair<std::int64_t, std::int64_t>> out;
  for (std::int64_t s = 0; s + clip_len <= video_len; s += stride) out.emplace_back(s, s + clip_len);
  return out;
}

/// Network input and training target for one clip window.
struct ClipBatch {
  Tensor input;
  Tensor target;
};

namespace detail {

inline Tensor crop_labels(const Tensor& seg, std::int64_t y0, std::int64_t x0, std::int64_t h, std::int64_t w) {
  const Tensor t = spatial_crop(seg.reshaped(Shape{1, seg.dim(0), seg.dim(1), seg.dim(2)}), y0, x0, h, w);
  return t.reshaped(Shape{t.dim(1), h, w});
}

}  // namespace detail

/// Cuts frames [start, start+frames) at offset (y0, x0) and builds the task's
/// input and target. Flow targets are divided by alpha.
inline ClipBatch make_batch(const ClipSample& s, const TrainConfig& cfg, std::int64_t start, std::int64_t y0,
                            std::int64_t x0) {
  const auto clip = spatial_crop(temporal_slice(s.clip, start, cfg.frames), y0, x0, cfg.height, cfg.width);
  switch (cfg.task.kind) {
    case TaskHead::Kind::Segmentation:
      return {clip, detail::crop_labels(temporal_slice3(s.gt_seg, start, cfg.frames), y0, x0, cfg.height, cfg.width)};
    case TaskHead::Kind::Flow:
      return {clip, flow_scale(spatial_crop(temporal_slice(s.gt_flow, start, cfg.frames), y0, x0, cfg.height, cfg.width),
                               FlowScaling(cfg.task.alpha))};
    case TaskHead::Kind::Color:
      return {to_grayscale(clip), spatial_crop(temporal_slice(s.gt_color, start, cfg.frames), y0, x0, cfg.height, cfg.width)};
  }
  throw Error(ErrorCode::InvalidConfig, "unknown task");
}

inline std::pair<std::int64_t, std::int64_t> center_offset(const ClipSample& s, const TrainConfig& cfg) {
  return {(s.clip.dim(2) - cfg.height) / 2, (s.clip.dim(3) - cfg.width) / 2};
}

inline LossResult task_loss(const TaskHead& head, const Tensor& pred, const Tensor& target,
                            HuberVariant huber = HuberVariant::Literal) {
  switch (head.kind) {
    case TaskHead::Kind::Segmentation: return softmax_ce_loss(pred, target);
    case TaskHead::Kind::Flow: return huber_loss(pred, target, huber);
    case TaskHead::Kind::Color: return l2_loss(pred, target);
  }
  throw Error(ErrorCode::InvalidConfig, "unknown task");
}

inline void check_samples(const std::vector<ClipSample>& samples, const TrainConfig& cfg) {
  if (samples.empty()) throw Error(ErrorCode::EmptyDataset, "no samples");
  for (const auto& s : samples) {
    if (s.clip.dim(1) < cfg.frames || s.clip.dim(2) < cfg.height || s.clip.dim(3) < cfg.width)
      throw Error(ErrorCode::ShapeMismatch, s.id + ": clip " + s.clip.shape().str() + " smaller than network input " +
                                                cfg.input_shape().str());
    if (cfg.task.kind == TaskHead::Kind::Segmentation) {
      for (float v : s.gt_seg.values())
        if (v != static_cast<float>(kIgnoreLabel) && (v < 0.0f || v >= static_cast<float>(cfg.task.classes)))
          throw Error(ErrorCode::ManifestTaskMismatch,
                      s.id + ": label " + std::to_string(v) + " outside a " + std::to_string(cfg.task.classes) + "-class task");
    }
  }
}

inline NetGraph make_model(const TrainConfig& cfg) {
  NetGraph g = build_network(cfg.architecture, cfg.task, cfg.input_shape(), ChannelPlan::scaled(cfg.width_mult));
  init_params(g, cfg.seed, cfg.init_scheme);
  return g;
}

struct TrainResult {
  NetGraph graph;
  std::vector<float> losses;
  BindReport bind;
  std::int64_t iterations = 0;
};

struct TrainHooks {
  /// Receives each "iter,lr,loss" line.
  std::function<void(const std::string&)> log_line;
  /// Called after each step; returning true stops training early.
  std::function<bool(std::int64_t iter, const NetGraph&)> after_step;
  /// Write checkpoints and the CSV log to the paths in the config.
  bool write_files = true;
};

inline std::string format_log_line(std::int64_t iter, float lr, float loss) {
  char buf[96];
  std::snprintf(buf, sizeof buf, "%lld,%.9g,%.9g", static_cast<long long>(iter), static_cast<double>(lr),
                static_cast<double>(loss));
  return buf;
}

inline void apply_regularization(ParamMap& grads, const ParamMap& params, const TrainConfig& cfg) {
  if (cfg.weight_decay > 0.0f)
    for (auto& [name, g] : grads) {
      const Tensor& p = params.at(name);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += cfg.weight_decay * p[i];
    }
  if (cfg.grad_clip > 0.0f) {
    double sq = 0.0;
    for (const auto& [name, g] : grads) sq += dot(g, g);
    const double norm = std::sqrt(sq);
    if (norm > cfg.grad_clip) {
      const auto scale = static_cast<float>(cfg.grad_clip / norm);
      for (auto& [name, g] : grads)
        for (auto& v : g.values()) v *= scale;
    }
  }
}

/// Single-clip SGD over a seeded, per-epoch shuffled list of clip windows.
inline TrainResult train(const TrainConfig& cfg, const std::vector<ClipSample>& samples, const TrainHooks& hooks = {}) {
  cfg.validate();
  check_samples(samples, cfg);
  TrainResult r{make_model(cfg), {}, {}, 0};
  if (!cfg.init_checkpoint.empty()) r.bind = bind_checkpoint(r.graph, checkpoint_load(cfg.init_checkpoint));

  std::vector<std::pair<std::size_t, std::int64_t>> windows;
  for (std::size_t i = 0; i < samples.size(); ++i)
    for (const auto& [start, end] : sample_clips(samples[i].clip.dim(1), cfg.clip_stride_train, cfg.frames))
      windows.emplace_back(i, start);
  std::mt19937_64 order_rng(cfg.seed ^ 0x5eedULL);
  std::mt19937_64 crop_rng(cfg.seed ^ 0xc0ffeeULL);
  std::vector<std::size_t> order(windows.size());

  std::ofstream log;
  if (hooks.write_files) {
    log.open(cfg.log, std::ios::binary);
    if (!log) throw Error(ErrorCode::Io, "cannot write " + cfg.log.string());
    log << "iter,lr,loss\n";
  }
  ParamMap velocity;
  std::size_t cursor = order.size();
  for (std::int64_t it = 0; it < cfg.max_iters; ++it) {
    if (cursor == order.size()) {
      std::iota(order.begin(), order.end(), std::size_t{0});
      std::shuffle(order.begin(), order.end(), order_rng);
      cursor = 0;
    }
    const auto [si, start] = windows[order[cursor++]];
    const ClipSample& s = samples[si];
    auto [y0, x0] = center_offset(s, cfg);
    if (cfg.crop == CropPolicy::Random) {
      y0 = std::uniform_int_distribution<std::int64_t>(0, s.clip.dim(2) - cfg.height)(crop_rng);
      x0 = std::uniform_int_distribution<std::int64_t>(0, s.clip.dim(3) - cfg.width)(crop_rng);
    }
    const ClipBatch b = make_batch(s, cfg, start, y0, x0);
    const ForwardResult fr = forward(r.graph, b.input);
    const LossResult loss = task_loss(cfg.task, fr.prediction, b.target, cfg.huber);
    if (!std::isfinite(loss.loss))
      throw Error(ErrorCode::InvalidConfig, "loss diverged at iteration " + std::to_string(it));
    ParamMap grads = backward(r.graph, fr.cache, loss.grad);
    apply_regularization(grads, r.graph.params, cfg);
    const float lr = lr_at(cfg, it);
    sgd_step(r.graph.params, grads, lr, cfg.momentum, velocity);
    r.losses.push_back(loss.loss);
    r.iterations = it + 1;

    const std::string line = format_log_line(it, lr, loss.loss);
    if (log.is_open()) log << line << '\n';
    if (hooks.log_line) hooks.log_line(line);
    if (hooks.write_files && cfg.checkpoint_every > 0 && (it + 1) % cfg.checkpoint_every == 0 && it + 1 < cfg.max_iters) {
      auto p = cfg.checkpoint;
      p += "." + std::to_string(it + 1);
      checkpoint_save(r.graph.params, p);
    }
    if (hooks.after_step && hooks.after_step(it, r.graph)) break;
  }
  if (hooks.write_files) {
    log.flush();
    if (!log) throw Error(ErrorCode::Io, "failed writing " + cfg.log.string());
    checkpoint_save(r.graph.params, cfg.checkpoint);
  }
  return r;
}

/// Task prediction in output units: flow is multiplied back by alpha.
inline Tensor predict(const NetGraph& g, const Tensor& input) {
  Tensor y = forward(g, input).prediction;
  if (g.head.kind == TaskHead::Kind::Flow) y = flow_descale(y, FlowScaling(g.head.alpha));
  return y;
}

struct EvalReport {
  TaskHead task;
  std::string metric;
  double value = 0.0;
  std::int64_t clips = 0;
  std::int64_t voxels = 0;
  ConfusionMatrix cm;

  std::string str() const {
    std::ostringstream os;
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6f", value);
    os << "task " << task.name() << "\nclips " << clips << "\nvoxels " << voxels << "\n" << metric << " " << buf << "\n";
    if (task.kind == TaskHead::Kind::Segmentation) os << "confusion (rows truth, cols predicted)\n" << cm.str();
    return os.str();
  }
};

/// Scores every non-overlapping (clip_stride_eval) window with a center crop.
/// Flow is compared in pixel units against the unscaled ground truth.
inline EvalReport evaluate(const NetGraph& g, const std::vector<ClipSample>& samples, const TrainConfig& cfg) {
  if (samples.empty()) throw Error(ErrorCode::EmptyDataset, "evaluation set is empty");
  check_samples(samples, cfg);
  EvalReport rep{cfg.task, "", 0.0, 0, 0, ConfusionMatrix(cfg.task.output_channels())};
  EpeAccumulator epe_acc;
  AdeAccumulator ade_acc;
  for (const auto& s : samples) {
    const auto [y0, x0] = center_offset(s, cfg);
    for (const auto& [start, end] : sample_clips(s.clip.dim(1), cfg.clip_stride_eval, cfg.frames)) {
      const ClipBatch b = make_batch(s, cfg, start, y0, x0);
      const Tensor pred = forward(g, b.input).prediction;
      ++rep.clips;
      switch (cfg.task.kind) {
        case TaskHead::Kind::Segmentation: rep.cm.merge(seg_accuracy(pred, b.target).cm); break;
        case TaskHead::Kind::Flow: {
          const Tensor gt = spatial_crop(temporal_slice(s.gt_flow, start, cfg.frames), y0, x0, cfg.height, cfg.width);
          epe_acc.add(flow_descale(pred, FlowScaling(cfg.task.alpha)), gt);
          break;
        }
        case TaskHead::Kind::Color: ade_acc.add(pred, b.target); break;
      }
    }
  }
  if (rep.clips == 0) throw Error(ErrorCode::EmptyDataset, "no clip of " + std::to_string(cfg.frames) + " frames fits the videos");
  switch (cfg.task.kind) {
    case TaskHead::Kind::Segmentation:
      rep.metric = "accuracy";
      rep.value = rep.cm.accuracy();
      rep.voxels = rep.cm.total();
      break;
    case TaskHead::Kind::Flow:
      rep.metric = "epe";
      rep.value = epe_acc.mean();
      rep.voxels = epe_acc.voxels;
      break;
    case TaskHead::Kind::Color:
      rep.metric = "ade";
      rep.value = ade_acc.mean();
      rep.voxels = ade_acc.voxels;
      break;
  }
  return rep;
}

}  // namespace v2v
