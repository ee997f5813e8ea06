#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "v2v/tensor.hpp"

namespace v2v {

/// Label value excluded from segmentation loss and accuracy.
inline constexpr int kIgnoreLabel = 255;

struct LossResult {
  float loss = 0.0f;
  Tensor grad;
};

namespace detail {

inline void require_same(const Tensor& a, const Tensor& b, const char* what) {
  if (!(a.shape() == b.shape()))
    throw Error(ErrorCode::ShapeMismatch, std::string(what) + ": " + a.shape().str() + " vs " + b.shape().str());
}

inline void require_labels(const Tensor& logits, const Tensor& labels) {
  if (logits.rank() != 4 || labels.rank() != 3 || labels.dim(0) != logits.dim(1) || labels.dim(1) != logits.dim(2) ||
      labels.dim(2) != logits.dim(3))
    throw Error(ErrorCode::ShapeMismatch, "logits " + logits.shape().str() + " vs labels " + labels.shape().str());
}

inline int label_at(const Tensor& labels, std::size_t i, std::int64_t classes) {
  const float v = labels[i];
  const int c = static_cast<int>(v);
  if (static_cast<float>(c) != v || ((c < 0 || c >= classes) && c != kIgnoreLabel))
    throw Error(ErrorCode::LabelOutOfRange, "label " + std::to_string(v) + " at voxel " + std::to_string(i) +
                                                " outside [0," + std::to_string(classes) + ")");
  return c;
}

}  // namespace detail

/// Voxelwise softmax cross-entropy, averaged over non-ignored voxels.
/// logits [K,L,H,W]; labels [L,H,W] holding class ids or 255.
inline LossResult softmax_ce_loss(const Tensor& logits, const Tensor& labels) {
  detail::require_labels(logits, labels);
  const std::int64_t K = logits.dim(0);
  const std::size_t V = labels.size();
  LossResult r{0.0f, Tensor(logits.shape())};
  std::vector<int> lab(V);
  std::size_t scored = 0;
  for (std::size_t v = 0; v < V; ++v) {
    lab[v] = detail::label_at(labels, v, K);
    if (lab[v] != kIgnoreLabel) ++scored;
  }
  if (scored == 0) return r;
  const double inv_n = 1.0 / static_cast<double>(scored);
  double total = 0.0;
  std::vector<double> p(static_cast<std::size_t>(K));
  for (std::size_t v = 0; v < V; ++v) {
    if (lab[v] == kIgnoreLabel) continue;
    double m = -std::numeric_limits<double>::infinity();
    for (std::int64_t k = 0; k < K; ++k) m = std::max(m, static_cast<double>(logits[static_cast<std::size_t>(k) * V + v]));
    double z = 0.0;
    for (std::int64_t k = 0; k < K; ++k) {
      p[static_cast<std::size_t>(k)] = std::exp(static_cast<double>(logits[static_cast<std::size_t>(k) * V + v]) - m);
      z += p[static_cast<std::size_t>(k)];
    }
    const double log_z = std::log(z);
    total += -(static_cast<double>(logits[static_cast<std::size_t>(lab[v]) * V + v]) - m - log_z);
    for (std::int64_t k = 0; k < K; ++k) {
      const double prob = p[static_cast<std::size_t>(k)] / z;
      r.grad[static_cast<std::size_t>(k) * V + v] = static_cast<float>((prob - (k == lab[v] ? 1.0 : 0.0)) * inv_n);
    }
  }
  r.loss = static_cast<float>(total * inv_n);
  return r;
}

enum class HuberVariant {
  /// x^2/2 for |x| <= 1, |x| otherwise (discontinuous value at |x| = 1).
  Literal,
  /// x^2/2 for |x| <= 1, |x| - 1/2 otherwise.
  Smooth,
};

inline double huber_value(double x, HuberVariant variant = HuberVariant::Literal) {
  const double a = std::abs(x);
  if (a <= 1.0) return 0.5 * x * x;
  return variant == HuberVariant::Literal ? a : a - 0.5;
}

/// Mean Huber penalty of pred - target over all elements. Targets must
/// already be divided by the flow scale.
inline LossResult huber_loss(const Tensor& pred, const Tensor& target, HuberVariant variant = HuberVariant::Literal) {
  detail::require_same(pred, target, "huber_loss");
  LossResult r{0.0f, Tensor(pred.shape())};
  const double inv_n = 1.0 / static_cast<double>(pred.size());
  double total = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double x = static_cast<double>(pred[i]) - static_cast<double>(target[i]);
    total += huber_value(x, variant);
    const double g = std::abs(x) <= 1.0 ? x : (x > 0.0 ? 1.0 : -1.0);
    r.grad[i] = static_cast<float>(g * inv_n);
  }
  r.loss = static_cast<float>(total * inv_n);
  return r;
}

/// Mean of (pred - target)^2 / 2.
inline LossResult l2_loss(const Tensor& pred, const Tensor& target) {
  detail::require_same(pred, target, "l2_loss");
  LossResult r{0.0f, Tensor(pred.shape())};
  const double inv_n = 1.0 / static_cast<double>(pred.size());
  double total = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = static_cast<double>(pred[i]) - static_cast<double>(target[i]);
    total += 0.5 * d * d;
    r.grad[i] = static_cast<float>(d * inv_n);
  }
  r.loss = static_cast<float>(total * inv_n);
  return r;
}

/// Flow values are divided by alpha before the loss and predictions are
/// multiplied back at inference.
struct FlowScaling {
  float alpha = 15.0f;

  explicit FlowScaling(float a = 15.0f) : alpha(a) {
    if (!(alpha > 0.0f)) throw Error(ErrorCode::InvalidConfig, "flow scale alpha must be positive");
  }
};

inline Tensor flow_scale(const Tensor& flow, const FlowScaling& s) {
  Tensor out(flow.shape());
  for (std::size_t i = 0; i < flow.size(); ++i) out[i] = flow[i] / s.alpha;
  return out;
}

inline Tensor flow_descale(const Tensor& pred, const FlowScaling& s) {
  Tensor out(pred.shape());
  for (std::size_t i = 0; i < pred.size(); ++i) out[i] = pred[i] * s.alpha;
  return out;
}

/// Running sums for endpoint error.
struct EpeAccumulator {
  double sum = 0.0;
  std::int64_t voxels = 0;

  void add(const Tensor& pred, const Tensor& gt) {
    detail::require_same(pred, gt, "epe");
    if (pred.rank() != 4 || pred.dim(0) != 2) throw Error(ErrorCode::ShapeMismatch, "flow must be [2,L,H,W]");
    const std::size_t V = pred.size() / 2;
    for (std::size_t v = 0; v < V; ++v) {
      const double du = static_cast<double>(pred[v]) - gt[v];
      const double dv = static_cast<double>(pred[V + v]) - gt[V + v];
      sum += std::sqrt(du * du + dv * dv);
    }
    voxels += static_cast<std::int64_t>(V);
  }
  double mean() const { return voxels ? sum / static_cast<double>(voxels) : 0.0; }
};

/// Mean endpoint error in unscaled flow units (pixels / frame).
inline float epe(const Tensor& pred_flow, const Tensor& gt_flow) {
  EpeAccumulator acc;
  acc.add(pred_flow, gt_flow);
  return static_cast<float>(acc.mean());
}

struct AdeAccumulator {
  double sum = 0.0;
  std::int64_t voxels = 0;

  void add(const Tensor& pred, const Tensor& gt) {
    detail::require_same(pred, gt, "ade");
    if (pred.rank() != 4 || pred.dim(0) != 3) throw Error(ErrorCode::ShapeMismatch, "color must be [3,L,H,W]");
    const std::size_t V = pred.size() / 3;
    for (std::size_t v = 0; v < V; ++v) {
      double s = 0.0;
      for (std::size_t c = 0; c < 3; ++c) {
        const double d = std::clamp(static_cast<double>(pred[c * V + v]), 0.0, 1.0) -
                         std::clamp(static_cast<double>(gt[c * V + v]), 0.0, 1.0);
        s += d * d;
      }
      sum += std::sqrt(s);
    }
    voxels += static_cast<std::int64_t>(V);
  }
  double mean() const { return voxels ? sum / static_cast<double>(voxels) : 0.0; }
};

/// Mean RGB distance with both inputs clamped to [0,1].
inline float ade(const Tensor& pred_rgb, const Tensor& gt_rgb) {
  AdeAccumulator acc;
  acc.add(pred_rgb, gt_rgb);
  return static_cast<float>(acc.mean());
}

/// Rows are ground-truth classes, columns predicted classes.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::int64_t classes = 0)
      : k_(classes), counts_(static_cast<std::size_t>(classes * classes), 0) {}

  std::int64_t classes() const noexcept { return k_; }
  std::int64_t at(std::int64_t truth, std::int64_t pred) const { return counts_[static_cast<std::size_t>(truth * k_ + pred)]; }
  void add(std::int64_t truth, std::int64_t pred) { ++counts_[static_cast<std::size_t>(truth * k_ + pred)]; }

  void merge(const ConfusionMatrix& o) {
    if (o.k_ != k_) throw Error(ErrorCode::ShapeMismatch, "confusion matrices of different size");
    for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += o.counts_[i];
  }

  std::int64_t total() const {
    std::int64_t n = 0;
    for (auto c : counts_) n += c;
    return n;
  }
  std::int64_t trace() const {
    std::int64_t n = 0;
    for (std::int64_t i = 0; i < k_; ++i) n += at(i, i);
    return n;
  }
  double accuracy() const {
    const auto n = total();
    return n ? static_cast<double>(trace()) / static_cast<double>(n) : 0.0;
  }

  std::string str() const {
    std::ostringstream os;
    for (std::int64_t i = 0; i < k_; ++i) {
      for (std::int64_t j = 0; j < k_; ++j) os << (j ? " " : "") << at(i, j);
      os << '\n';
    }
    return os.str();
  }

  friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;

 private:
  std::int64_t k_;
  std::vector<std::int64_t> counts_;
};

/// Per-voxel argmax with ties going to the lowest class index.
inline Tensor argmax_classes(const Tensor& logits) {
  if (logits.rank() != 4) throw Error(ErrorCode::ShapeMismatch, "logits must be [K,L,H,W]");
  const std::int64_t K = logits.dim(0);
  const std::size_t V = logits.size() / static_cast<std::size_t>(K);
  Tensor out(Shape{logits.dim(1), logits.dim(2), logits.dim(3)});
  for (std::size_t v = 0; v < V; ++v) {
    std::int64_t best = 0;
    for (std::int64_t k = 1; k < K; ++k)
      if (logits[static_cast<std::size_t>(k) * V + v] > logits[static_cast<std::size_t>(best) * V + v]) best = k;
    out[v] = static_cast<float>(best);
  }
  return out;
}

struct SegScore {
  float accuracy = 0.0f;
  ConfusionMatrix cm;
};

inline SegScore seg_accuracy(const Tensor& pred_logits, const Tensor& labels) {
  detail::require_labels(pred_logits, labels);
  const std::int64_t K = pred_logits.dim(0);
  const Tensor pred = argmax_classes(pred_logits);
  SegScore s{0.0f, ConfusionMatrix(K)};
  for (std::size_t v = 0; v < labels.size(); ++v) {
    const int t = detail::label_at(labels, v, K);
    if (t == kIgnoreLabel) continue;
    s.cm.add(t, static_cast<std::int64_t>(pred[v]));
  }
  s.accuracy = static_cast<float>(s.cm.accuracy());
  return s;
}

}  // namespace v2v
