#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "smseg/assignment.hpp"
#include "smseg/embeddings.hpp"
#include "smseg/tensor.hpp"

namespace smseg {

struct CostWeights {
  float w_cls = 1.0f;
  float w_bce = 1.0f;
  float w_dice = 1.0f;
  float w_iou = 1.0f;
  float focal_alpha = 0.25f;
  float focal_gamma = 2.0f;
  bool use_iou_in_loss = true;
  float eps = 1.0f;  // DICE / IoU smoothing

  void validate() const;
};

inline constexpr double kProbClamp = 1e-7;

// ---------------------------------------------------------------------------
// Scalar kernels. Templated on the element type so the gradient checker can
// run them in f64; forward contracts use f32 inputs. Reductions always
// accumulate in f64 in index order.

template <class T>
T sigmoid(T x) {
  if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

template <class T>
T softplus(T x) {
  return std::max(x, T(0)) + std::log1p(std::exp(-std::abs(x)));
}

/// 1 - (2 sum(m y) + eps) / (sum m + sum y + eps)
template <class T, class Y>
T dice_loss(std::span<const T> m, std::span<const Y> y, double eps = 1.0) {
  double inter = 0.0, sm = 0.0, sy = 0.0;
  for (std::size_t i = 0; i < m.size(); ++i) {
    const double yi = static_cast<double>(y[i]);
    inter += m[i] * yi;
    sm += m[i];
    sy += yi;
  }
  return static_cast<T>(1.0 - (2.0 * inter + eps) / (sm + sy + eps));
}

template <class T, class Y>
void dice_grad(std::span<const T> m, std::span<const Y> y, double eps, std::span<T> grad) {
  double inter = 0.0, sm = 0.0, sy = 0.0;
  for (std::size_t i = 0; i < m.size(); ++i) {
    const double yi = static_cast<double>(y[i]);
    inter += m[i] * yi;
    sm += m[i];
    sy += yi;
  }
  const double num = 2.0 * inter + eps, den = sm + sy + eps;
  for (std::size_t i = 0; i < m.size(); ++i)
    grad[i] = static_cast<T>(-(2.0 * static_cast<double>(y[i]) * den - num) / (den * den));
}

/// 1 - (sum min(m, y) + eps) / (sum max(m, y) + eps)
template <class T, class Y>
T iou_loss(std::span<const T> m, std::span<const Y> y, double eps = 1.0) {
  double lo = 0.0, hi = 0.0;
  for (std::size_t i = 0; i < m.size(); ++i) {
    const double a = m[i], b = static_cast<double>(y[i]);
    lo += std::min(a, b);
    hi += std::max(a, b);
  }
  return static_cast<T>(1.0 - (lo + eps) / (hi + eps));
}

/// Gradient where m != y elementwise (min/max are differentiable there).
template <class T, class Y>
void iou_grad(std::span<const T> m, std::span<const Y> y, double eps, std::span<T> grad) {
  double lo = 0.0, hi = 0.0;
  for (std::size_t i = 0; i < m.size(); ++i) {
    const double a = m[i], b = static_cast<double>(y[i]);
    lo += std::min(a, b);
    hi += std::max(a, b);
  }
  const double num = lo + eps, den = hi + eps;
  for (std::size_t i = 0; i < m.size(); ++i) {
    const double a = m[i], b = static_cast<double>(y[i]);
    const double dlo = a < b ? 1.0 : 0.0;
    const double dhi = a > b ? 1.0 : 0.0;
    grad[i] = static_cast<T>(-(dlo * den - num * dhi) / (den * den));
  }
}

/// Mean over pixels of max(x,0) - x y + log(1 + exp(-|x|)).
template <class T, class Y>
T bce_mask(std::span<const T> logits, std::span<const Y> y) {
  if (logits.empty()) return T(0);
  double acc = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const double x = logits[i];
    acc += std::max(x, 0.0) - x * static_cast<double>(y[i]) + std::log1p(std::exp(-std::abs(x)));
  }
  return static_cast<T>(acc / static_cast<double>(logits.size()));
}

template <class T, class Y>
void bce_grad(std::span<const T> logits, std::span<const Y> y, std::span<T> grad) {
  const double n = static_cast<double>(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i)
    grad[i] = static_cast<T>((sigmoid(static_cast<double>(logits[i])) - static_cast<double>(y[i])) / n);
}

/// Sigmoid focal loss summed over independent class channels. The target
/// channel contributes -alpha (1-p)^gamma ln p, every other channel
/// -(1-alpha) p^gamma ln(1-p); no target means all channels are negatives.
/// Probabilities are clamped to [1e-7, 1 - 1e-7].
template <class T>
T focal_loss(std::span<const T> p, std::optional<std::size_t> target, double alpha,
             double gamma) {
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double q = std::clamp(static_cast<double>(p[i]), kProbClamp, 1.0 - kProbClamp);
    if (target && *target == i)
      acc += -alpha * std::pow(1.0 - q, gamma) * std::log(q);
    else
      acc += -(1.0 - alpha) * std::pow(q, gamma) * std::log(1.0 - q);
  }
  return static_cast<T>(acc);
}

/// d focal / d p (zero where the clamp is active).
template <class T>
void focal_grad(std::span<const T> p, std::optional<std::size_t> target, double alpha,
                double gamma, std::span<T> grad) {
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double raw = p[i];
    if (raw < kProbClamp || raw > 1.0 - kProbClamp) {
      grad[i] = T(0);
      continue;
    }
    const double q = raw;
    double g;
    if (target && *target == i) {
      const double pw = gamma == 0.0 ? 0.0 : gamma * std::pow(1.0 - q, gamma - 1.0) * std::log(q);
      g = -alpha * (-pw + std::pow(1.0 - q, gamma) / q);
    } else {
      const double pw = gamma == 0.0 ? 0.0 : gamma * std::pow(q, gamma - 1.0) * std::log(1.0 - q);
      g = -(1.0 - alpha) * (pw - std::pow(q, gamma) / (1.0 - q));
    }
    grad[i] = static_cast<T>(g);
  }
}

/// Mean softmax cross-entropy over non-ignored pixels of an N x P logit map
/// (channel-major). Returns 0 when every pixel is ignored.
template <class T>
T cross_entropy_map(std::span<const T> logits, std::size_t classes,
                    std::span<const std::int32_t> labels, std::int32_t ignore_id);

template <class T>
void cross_entropy_grad(std::span<const T> logits, std::size_t classes,
                        std::span<const std::int32_t> labels, std::int32_t ignore_id,
                        std::span<T> grad);

/// Mean over non-ignored pixels of focal(sigmoid(logits[:, p]), label[p]).
template <class T>
T focal_map(std::span<const T> logits, std::size_t classes, std::span<const std::int32_t> labels,
            std::int32_t ignore_id, double alpha, double gamma);

template <class T>
void focal_map_grad(std::span<const T> logits, std::size_t classes,
                    std::span<const std::int32_t> labels, std::int32_t ignore_id, double alpha,
                    double gamma, std::span<T> grad);

/// 1 - cos(a, b).
template <class T>
T cosine_distance(std::span<const T> a, std::span<const T> b) {
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += static_cast<double>(a[i]) * b[i];
    aa += static_cast<double>(a[i]) * a[i];
    bb += static_cast<double>(b[i]) * b[i];
  }
  if (aa <= 0.0 || bb <= 0.0) return T(1);
  return static_cast<T>(1.0 - ab / (std::sqrt(aa) * std::sqrt(bb)));
}

/// d (1 - cos(a, b)) / d a.
template <class T>
void cosine_distance_grad(std::span<const T> a, std::span<const T> b, std::span<T> grad) {
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += static_cast<double>(a[i]) * b[i];
    aa += static_cast<double>(a[i]) * a[i];
    bb += static_cast<double>(b[i]) * b[i];
  }
  const double na = std::sqrt(aa), nb = std::sqrt(bb);
  for (std::size_t i = 0; i < a.size(); ++i)
    grad[i] = static_cast<T>(-(b[i] / (na * nb) - ab * a[i] / (aa * na * nb)));
}

// ---------------------------------------------------------------------------
// Composite losses over predictions.

/// S[k, n] = sigmoid(V[k] . E[n]).
Tensor class_similarity(const Tensor& V, const JointEmbedding& E);

struct CostMatrix {
  std::size_t queries = 0;
  std::size_t targets = 0;
  std::vector<float> values;  // queries x targets
  Group row_group = Group::seen;
  std::vector<std::size_t> target_ids;

  float at(std::size_t k, std::size_t t) const { return values[k * targets + t]; }
};

/// values[k, t] = w_cls focal(S[k], class_t) + w_bce bce(M[k], mask_t)
///              + w_dice dice(sigmoid(M[k]), mask_t)
CostMatrix match_cost_matrix(const Tensor& S, const Tensor& mask_logits, const TargetSet& targets,
                             Group group, std::size_t seen_count, const CostWeights& w);

struct MatchedLossBreakdown {
  double cls = 0.0;        // mean weighted focal over matched pairs
  double bce = 0.0;
  double dice = 0.0;
  double iou = 0.0;
  double no_object = 0.0;  // mean weighted focal(target = none) over unmatched queries
  std::size_t matched = 0;
  std::size_t unmatched = 0;

  double total() const { return cls + bce + dice + iou + no_object; }
};

MatchedLossBreakdown matched_loss(const Assignment& assignment, const Tensor& S,
                                  const Tensor& mask_logits, const TargetSet& targets,
                                  const CostWeights& w);

/// Mean over candidate pairs of 1 - cos(V[q], E[class_t]); 0 with no pairs.
double cosine_loss(const Tensor& V, const JointEmbedding& E, const TargetSet& targets,
                   const Assignment& assignment);

/// Pluggable global term of the MFE loss; disabled by default.
using GlobalLoss = std::function<double(const Tensor& fused)>;

double sm_loss(double matched, double cosine);
double mfe_loss(double ce, double focal, std::optional<double> global = std::nullopt);
double total_loss(double sm, double mfe);

}  // namespace smseg
