#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace v2v {

/// Error categories. The CLI maps these onto its exit codes.
enum class ErrorCode {
  EmptyDims,
  DimensionOverflow,
  InvalidDims,
  BadMagic,
  UnsupportedVersion,
  TruncatedPayload,
  DimsPayloadMismatch,
  DuplicateName,
  ShapeMismatch,
  ChannelMismatch,
  NonPositiveOutputShape,
  SpatialMismatch,
  DownsampleRequested,
  IndivisibleInputShape,
  ShapePropagationFailure,
  LabelOutOfRange,
  DimsMismatch,
  ObjectOutOfCanvas,
  ManifestTaskMismatch,
  EmptyDataset,
  InvalidConfig,
  Io,
};

inline const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::EmptyDims: return "empty-dims";
    case ErrorCode::DimensionOverflow: return "dimension-overflow";
    case ErrorCode::InvalidDims: return "invalid-dims";
    case ErrorCode::BadMagic: return "bad-magic";
    case ErrorCode::UnsupportedVersion: return "unsupported-version";
    case ErrorCode::TruncatedPayload: return "truncated-payload";
    case ErrorCode::DimsPayloadMismatch: return "dims-payload-mismatch";
    case ErrorCode::DuplicateName: return "duplicate-name";
    case ErrorCode::ShapeMismatch: return "shape-mismatch";
    case ErrorCode::ChannelMismatch: return "channel-mismatch";
    case ErrorCode::NonPositiveOutputShape: return "non-positive-output-shape";
    case ErrorCode::SpatialMismatch: return "spatial-mismatch";
    case ErrorCode::DownsampleRequested: return "downsample-requested";
    case ErrorCode::IndivisibleInputShape: return "indivisible-input-shape";
    case ErrorCode::ShapePropagationFailure: return "shape-propagation-failure";
    case ErrorCode::LabelOutOfRange: return "label-out-of-range";
    case ErrorCode::DimsMismatch: return "dims-mismatch";
    case ErrorCode::ObjectOutOfCanvas: return "object-out-of-canvas";
    case ErrorCode::ManifestTaskMismatch: return "manifest-task-mismatch";
    case ErrorCode::EmptyDataset: return "empty-dataset";
    case ErrorCode::InvalidConfig: return "invalid-config";
    case ErrorCode::Io: return "io-error";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

/// Dimension list of rank 1..5. For video data the order is (C, L, H, W).
class Shape {
 public:
  static constexpr std::size_t kMaxRank = 5;
  static constexpr std::int64_t kMaxElements = std::int64_t{1} << 31;

  Shape() = default;

  Shape(std::initializer_list<std::int64_t> dims) : Shape(std::span<const std::int64_t>(dims.begin(), dims.size())) {}

  explicit Shape(std::span<const std::int64_t> dims) {
    if (dims.empty()) throw Error(ErrorCode::EmptyDims, "shape needs at least one dimension");
    if (dims.size() > kMaxRank)
      throw Error(ErrorCode::InvalidDims, "rank " + std::to_string(dims.size()) + " exceeds 5");
    std::int64_t n = 1;
    for (std::size_t i = 0; i < dims.size(); ++i) {
      if (dims[i] < 1) throw Error(ErrorCode::InvalidDims, "dimension " + std::to_string(dims[i]) + " < 1");
      if (dims[i] > kMaxElements || n > kMaxElements / dims[i])
        throw Error(ErrorCode::DimensionOverflow, "element count exceeds 2^31");
      n *= dims[i];
      dims_[i] = dims[i];
    }
    rank_ = dims.size();
  }

  explicit Shape(const std::vector<std::int64_t>& dims) : Shape(std::span<const std::int64_t>(dims)) {}

  std::size_t rank() const noexcept { return rank_; }
  std::int64_t operator[](std::size_t i) const noexcept { return dims_[i]; }

  std::int64_t numel() const noexcept {
    if (rank_ == 0) return 0;
    std::int64_t n = 1;
    for (std::size_t i = 0; i < rank_; ++i) n *= dims_[i];
    return n;
  }

  std::span<const std::int64_t> dims() const noexcept { return {dims_.data(), rank_}; }

  std::vector<std::int64_t> to_vector() const { return {dims_.begin(), dims_.begin() + rank_}; }

  friend bool operator==(const Shape& a, const Shape& b) noexcept {
    if (a.rank_ != b.rank_) return false;
    return std::equal(a.dims_.begin(), a.dims_.begin() + a.rank_, b.dims_.begin());
  }

  std::string str() const {
    std::ostringstream os;
    os << '(';
    for (std::size_t i = 0; i < rank_; ++i) os << (i ? "," : "") << dims_[i];
    os << ')';
    return os.str();
  }

 private:
  std::array<std::int64_t, kMaxRank> dims_{};
  std::size_t rank_ = 0;
};

/// Dense row-major f32 tensor, last dimension fastest.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape, float fill = 0.0f)
      : shape_(shape), data_(static_cast<std::size_t>(shape.numel()), fill) {
    if (shape.rank() == 0) throw Error(ErrorCode::EmptyDims, "tensor needs a shape");
  }

  Tensor(Shape shape, std::vector<float> data) : shape_(shape), data_(std::move(data)) {
    if (static_cast<std::int64_t>(data_.size()) != shape_.numel())
      throw Error(ErrorCode::DimsPayloadMismatch,
                  shape_.str() + " needs " + std::to_string(shape_.numel()) + " values, got " +
                      std::to_string(data_.size()));
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.rank(); }
  std::int64_t dim(std::size_t i) const noexcept { return shape_[i]; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  float* data() noexcept { return data_.data(); }
  const float* data() const noexcept { return data_.data(); }
  std::span<float> values() noexcept { return data_; }
  std::span<const float> values() const noexcept { return data_; }

  float& operator[](std::size_t i) noexcept { return data_[i]; }
  float operator[](std::size_t i) const noexcept { return data_[i]; }

  template <typename... Idx>
  std::size_t offset(Idx... idx) const noexcept {
    static_assert(sizeof...(Idx) >= 1 && sizeof...(Idx) <= Shape::kMaxRank);
    const std::int64_t ids[] = {static_cast<std::int64_t>(idx)...};
    std::int64_t flat = 0;
    for (std::size_t i = 0; i < sizeof...(Idx); ++i) flat = flat * shape_[i] + ids[i];
    return static_cast<std::size_t>(flat);
  }

  template <typename... Idx>
  float& operator()(Idx... idx) noexcept {
    return data_[offset(idx...)];
  }
  template <typename... Idx>
  float operator()(Idx... idx) const noexcept {
    return data_[offset(idx...)];
  }

  Tensor reshaped(Shape shape) const& {
    if (shape.numel() != shape_.numel())
      throw Error(ErrorCode::ShapeMismatch, "cannot reshape " + shape_.str() + " to " + shape.str());
    return Tensor(shape, data_);
  }
  Tensor reshaped(Shape shape) && {
    if (shape.numel() != shape_.numel())
      throw Error(ErrorCode::ShapeMismatch, "cannot reshape " + shape_.str() + " to " + shape.str());
    return Tensor(shape, std::move(data_));
  }

  void fill(float v) noexcept { std::fill(data_.begin(), data_.end(), v); }

  bool all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](float v) { return std::isfinite(v); });
  }

  /// Bitwise equality of shape and payload.
  friend bool operator==(const Tensor& a, const Tensor& b) noexcept {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape shape_;
  std::vector<float> data_;
};

inline Tensor tensor_new(const std::vector<std::int64_t>& dims, float fill) {
  return Tensor(Shape(dims), fill);
}

/// Frame slice [H,W] of channel c, frame l from a [C,L,H,W] tensor.
inline Tensor frame_slice(const Tensor& t, std::int64_t c, std::int64_t l) {
  const auto h = t.dim(2), w = t.dim(3);
  const auto* src = t.data() + t.offset(c, l, 0, 0);
  return Tensor(Shape{h, w}, std::vector<float>(src, src + h * w));
}

/// Frames [start, start+count) of a [C,L,H,W] tensor.
inline Tensor temporal_slice(const Tensor& t, std::int64_t start, std::int64_t count) {
  if (t.rank() != 4 || start < 0 || start + count > t.dim(1))
    throw Error(ErrorCode::ShapeMismatch, "temporal slice out of range for " + t.shape().str());
  const auto c = t.dim(0), h = t.dim(2), w = t.dim(3);
  Tensor out(Shape{c, count, h, w});
  const auto plane = static_cast<std::size_t>(count * h * w);
  for (std::int64_t ci = 0; ci < c; ++ci) {
    const auto* src = t.data() + t.offset(ci, start, 0, 0);
    std::copy(src, src + plane, out.data() + static_cast<std::size_t>(ci) * plane);
  }
  return out;
}

/// Same as temporal_slice for a rank-3 [L,H,W] tensor.
inline Tensor temporal_slice3(const Tensor& t, std::int64_t start, std::int64_t count) {
  if (t.rank() != 3) throw Error(ErrorCode::ShapeMismatch, "expected [L,H,W], got " + t.shape().str());
  return temporal_slice(t.reshaped(Shape{1, t.dim(0), t.dim(1), t.dim(2)}), start, count)
      .reshaped(Shape{count, t.dim(1), t.dim(2)});
}

/// Spatial crop [C,L,H,W] -> [C,L,h,w] at offset (y0, x0).
inline Tensor spatial_crop(const Tensor& t, std::int64_t y0, std::int64_t x0, std::int64_t h, std::int64_t w) {
  if (t.rank() != 4 || y0 < 0 || x0 < 0 || y0 + h > t.dim(2) || x0 + w > t.dim(3))
    throw Error(ErrorCode::ShapeMismatch, "crop out of range for " + t.shape().str());
  if (h == t.dim(2) && w == t.dim(3)) return t;
  const auto c = t.dim(0), l = t.dim(1);
  Tensor out(Shape{c, l, h, w});
  float* dst = out.data();
  for (std::int64_t ci = 0; ci < c; ++ci)
    for (std::int64_t li = 0; li < l; ++li)
      for (std::int64_t y = 0; y < h; ++y) {
        const float* src = t.data() + t.offset(ci, li, y0 + y, x0);
        dst = std::copy(src, src + w, dst);
      }
  return out;
}

inline double dot(const Tensor& a, const Tensor& b) {
  if (!(a.shape() == b.shape()))
    throw Error(ErrorCode::ShapeMismatch, a.shape().str() + " vs " + b.shape().str());
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += static_cast<double>(a[i]) * b[i];
  return s;
}

inline float max_abs_diff(const Tensor& a, const Tensor& b) {
  if (!(a.shape() == b.shape()))
    throw Error(ErrorCode::ShapeMismatch, a.shape().str() + " vs " + b.shape().str());
  float m = 0.0f;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

/// In-place a += b.
inline void add_inplace(Tensor& a, const Tensor& b) {
  if (!(a.shape() == b.shape()))
    throw Error(ErrorCode::ShapeMismatch, a.shape().str() + " vs " + b.shape().str());
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
}

}  // namespace v2v
