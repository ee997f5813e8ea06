#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <random>
#include <vector>

#include "v2v/tensor.hpp"

namespace v2v {

struct GradcheckOptions {
  /// Coordinates to probe; 0 probes every coordinate.
  std::size_t max_coords = 0;
  std::uint64_t seed = 7;
  /// Denominator floor for the relative error, so near-zero gradients are
  /// judged on an absolute scale.
  double abs_floor = 1e-3;
  /// A step that crosses a kink is retried at a tenth of its size until it
  /// would fall below min_eps. 0 means no retries.
  float min_eps = 0.0f;
};

struct GradcheckReport {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t probed = 0;
  /// Coordinates whose step crossed a kink.
  std::size_t skipped = 0;
};

/// A loss evaluation plus the discrete choices (ReLU signs, pool winners) it
/// made. A step that changes the choices crosses a kink and is not checked.
struct Probe {
  double value = 0.0;
  std::vector<std::int64_t> decisions;
};

/// Compares `analytic` against central differences of `loss` at `x`. The step
/// actually taken is measured after f32 rounding. A step whose +/- probes
/// change the decisions is shrunk (see min_eps) and the coordinate skipped if
/// no admissible step remains; with max_coords set, sampling continues until
/// that many coordinates were checked or the tensor is exhausted.
inline GradcheckReport gradcheck_scalar(const std::function<Probe(const Tensor&)>& loss, const Tensor& analytic,
                                        const Tensor& x, float eps, const GradcheckOptions& opt = {}) {
  if (!(analytic.shape() == x.shape()))
    throw Error(ErrorCode::ShapeMismatch, "analytic gradient " + analytic.shape().str() + " vs " + x.shape().str());
  std::vector<std::size_t> coords(x.size());
  std::iota(coords.begin(), coords.end(), std::size_t{0});
  if (opt.max_coords != 0 && opt.max_coords < coords.size()) {
    std::mt19937_64 rng(opt.seed);
    std::shuffle(coords.begin(), coords.end(), rng);
  }
  const std::size_t wanted = opt.max_coords == 0 ? coords.size() : std::min(opt.max_coords, coords.size());
  const auto base = loss(x).decisions;
  GradcheckReport rep;
  Tensor probe = x;
  for (const auto i : coords) {
    if (rep.probed == wanted) break;
    const float orig = x[i];
    std::optional<double> numeric;
    for (float step = eps; !numeric; step *= 0.1f) {
      const float plus = orig + step;
      const float minus = orig - step;
      probe[i] = plus;
      const Probe lp = loss(probe);
      probe[i] = minus;
      const Probe lm = loss(probe);
      probe[i] = orig;
      if (lp.decisions == base && lm.decisions == base)
        numeric = (lp.value - lm.value) / (static_cast<double>(plus) - static_cast<double>(minus));
      else if (step * 0.1f < opt.min_eps || opt.min_eps <= 0.0f)
        break;
    }
    if (!numeric) {
      ++rep.skipped;
      continue;
    }
    const double a = analytic[i];
    const double denom = std::max({std::abs(a), std::abs(*numeric), opt.abs_floor});
    const double rel = std::abs(a - *numeric) / denom;
    if (rep.probed == 0 || rel > rep.max_rel_error) {
      rep.max_rel_error = rel;
      rep.worst_index = i;
      rep.worst_analytic = a;
      rep.worst_numeric = *numeric;
    }
    ++rep.probed;
  }
  return rep;
}

/// Plain scalar loss, every step admissible.
inline GradcheckReport gradcheck_scalar(const std::function<double(const Tensor&)>& loss, const Tensor& analytic,
                                        const Tensor& x, float eps, const GradcheckOptions& opt = {}) {
  return gradcheck_scalar(std::function<Probe(const Tensor&)>([&](const Tensor& t) { return Probe{loss(t), {}}; }),
                          analytic, x, eps, opt);
}

/// Checks an op's input gradient through the scalar projection sum(f(x) * r)
/// with a fixed random r. `backward(x, dy)` must return d/dx of sum(f(x) * dy).
inline GradcheckReport gradcheck_report(const std::function<Tensor(const Tensor&)>& forward,
                                        const std::function<Tensor(const Tensor&, const Tensor&)>& backward,
                                        const Tensor& x, float eps, const GradcheckOptions& opt = {}) {
  const Tensor y = forward(x);
  Tensor proj(y.shape());
  std::mt19937_64 rng(opt.seed ^ 0x9e3779b97f4a7c15ULL);
  std::normal_distribution<float> normal(0.0f, 1.0f);
  for (auto& v : proj.values()) v = normal(rng);
  const Tensor analytic = backward(x, proj);
  auto loss = [&](const Tensor& xi) { return dot(forward(xi), proj); };
  return gradcheck_scalar(loss, analytic, x, eps, opt);
}

/// Worst relative error between analytic and central-difference gradients.
inline float gradcheck(const std::function<Tensor(const Tensor&)>& forward,
                       const std::function<Tensor(const Tensor&, const Tensor&)>& backward, const Tensor& x,
                       float eps, const GradcheckOptions& opt = {}) {
  return static_cast<float>(gradcheck_report(forward, backward, x, eps, opt).max_rel_error);
}

}  // namespace v2v
