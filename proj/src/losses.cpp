#include "smseg/losses.hpp"

#include <string>

namespace smseg {

void CostWeights::validate() const {
  if (w_cls < 0 || w_bce < 0 || w_dice < 0 || w_iou < 0)
    throw Error(ErrorCode::invalid_argument, "loss weights must be non-negative");
  if (!(focal_alpha > 0.0f && focal_alpha < 1.0f))
    throw Error(ErrorCode::invalid_argument, "focal alpha must lie in (0, 1)");
  if (focal_gamma < 0.0f) throw Error(ErrorCode::invalid_argument, "focal gamma must be >= 0");
  if (!(eps > 0.0f)) throw Error(ErrorCode::invalid_argument, "eps must be > 0");
}

namespace {

void check_label(std::int32_t l, std::size_t classes, std::int32_t ignore_id) {
  if (l == ignore_id) return;
  if (l < 0 || static_cast<std::size_t>(l) >= classes)
    throw Error(ErrorCode::out_of_range, "label " + std::to_string(l) + " outside [0, " +
                                             std::to_string(classes) + ")");
}

}  // namespace

template <class T>
T cross_entropy_map(std::span<const T> logits, std::size_t classes,
                    std::span<const std::int32_t> labels, std::int32_t ignore_id) {
  const std::size_t P = labels.size();
  if (logits.size() != classes * P)
    throw Error(ErrorCode::shape_mismatch, "logit map size does not match N x H x W");
  double acc = 0.0;
  std::size_t valid = 0;
  for (std::size_t p = 0; p < P; ++p) {
    check_label(labels[p], classes, ignore_id);
    if (labels[p] == ignore_id) continue;
    double mx = -INFINITY;
    for (std::size_t n = 0; n < classes; ++n) mx = std::max(mx, static_cast<double>(logits[n * P + p]));
    double se = 0.0;
    for (std::size_t n = 0; n < classes; ++n) se += std::exp(logits[n * P + p] - mx);
    acc += mx + std::log(se) - logits[static_cast<std::size_t>(labels[p]) * P + p];
    ++valid;
  }
  return valid ? static_cast<T>(acc / static_cast<double>(valid)) : T(0);
}

template <class T>
void cross_entropy_grad(std::span<const T> logits, std::size_t classes,
                        std::span<const std::int32_t> labels, std::int32_t ignore_id,
                        std::span<T> grad) {
  const std::size_t P = labels.size();
  std::fill(grad.begin(), grad.end(), T(0));
  std::size_t valid = 0;
  for (std::size_t p = 0; p < P; ++p) {
    check_label(labels[p], classes, ignore_id);
    valid += labels[p] != ignore_id;
  }
  if (!valid) return;
  for (std::size_t p = 0; p < P; ++p) {
    if (labels[p] == ignore_id) continue;
    double mx = -INFINITY;
    for (std::size_t n = 0; n < classes; ++n) mx = std::max(mx, static_cast<double>(logits[n * P + p]));
    double se = 0.0;
    for (std::size_t n = 0; n < classes; ++n) se += std::exp(logits[n * P + p] - mx);
    for (std::size_t n = 0; n < classes; ++n) {
      double g = std::exp(logits[n * P + p] - mx) / se;
      if (static_cast<std::int32_t>(n) == labels[p]) g -= 1.0;
      grad[n * P + p] = static_cast<T>(g / static_cast<double>(valid));
    }
  }
}

template <class T>
T focal_map(std::span<const T> logits, std::size_t classes, std::span<const std::int32_t> labels,
            std::int32_t ignore_id, double alpha, double gamma) {
  const std::size_t P = labels.size();
  if (logits.size() != classes * P)
    throw Error(ErrorCode::shape_mismatch, "logit map size does not match N x H x W");
  double acc = 0.0;
  std::size_t valid = 0;
  std::vector<double> prob(classes);
  for (std::size_t p = 0; p < P; ++p) {
    check_label(labels[p], classes, ignore_id);
    if (labels[p] == ignore_id) continue;
    for (std::size_t n = 0; n < classes; ++n) prob[n] = sigmoid(static_cast<double>(logits[n * P + p]));
    acc += focal_loss<double>(prob, static_cast<std::size_t>(labels[p]), alpha, gamma);
    ++valid;
  }
  return valid ? static_cast<T>(acc / static_cast<double>(valid)) : T(0);
}

template <class T>
void focal_map_grad(std::span<const T> logits, std::size_t classes,
                    std::span<const std::int32_t> labels, std::int32_t ignore_id, double alpha,
                    double gamma, std::span<T> grad) {
  const std::size_t P = labels.size();
  std::fill(grad.begin(), grad.end(), T(0));
  std::size_t valid = 0;
  for (std::size_t p = 0; p < P; ++p) {
    check_label(labels[p], classes, ignore_id);
    valid += labels[p] != ignore_id;
  }
  if (!valid) return;
  std::vector<double> prob(classes), g(classes);
  for (std::size_t p = 0; p < P; ++p) {
    if (labels[p] == ignore_id) continue;
    for (std::size_t n = 0; n < classes; ++n) prob[n] = sigmoid(static_cast<double>(logits[n * P + p]));
    focal_grad<double>(prob, static_cast<std::size_t>(labels[p]), alpha, gamma, g);
    for (std::size_t n = 0; n < classes; ++n)
      grad[n * P + p] =
          static_cast<T>(g[n] * prob[n] * (1.0 - prob[n]) / static_cast<double>(valid));
  }
}

#define SMSEG_INSTANTIATE(T)                                                                  \
  template T cross_entropy_map<T>(std::span<const T>, std::size_t,                            \
                                  std::span<const std::int32_t>, std::int32_t);               \
  template void cross_entropy_grad<T>(std::span<const T>, std::size_t,                        \
                                      std::span<const std::int32_t>, std::int32_t,            \
                                      std::span<T>);                                          \
  template T focal_map<T>(std::span<const T>, std::size_t, std::span<const std::int32_t>,     \
                          std::int32_t, double, double);                                      \
  template void focal_map_grad<T>(std::span<const T>, std::size_t,                            \
                                  std::span<const std::int32_t>, std::int32_t, double,        \
                                  double, std::span<T>);
SMSEG_INSTANTIATE(float)
SMSEG_INSTANTIATE(double)
#undef SMSEG_INSTANTIATE

Tensor class_similarity(const Tensor& V, const JointEmbedding& E) {
  if (V.rank() != 2 || V.dtype() != DType::f32)
    throw Error(ErrorCode::shape_mismatch, "V must be a K x C f32 matrix");
  const std::size_t K = V.dim(0), C = V.dim(1), N = E.rows();
  if (N > 0 && E.width() != C)
    throw Error(ErrorCode::shape_mismatch, "query width " + std::to_string(C) +
                                               " != embedding width " + std::to_string(E.width()));
  const auto v = V.f32();
  std::vector<float> s(K * N);
  if (N > 0) {
    const auto e = E.matrix.f32();
    for (std::size_t k = 0; k < K; ++k)
      for (std::size_t n = 0; n < N; ++n) {
        double dot = 0.0;
        for (std::size_t c = 0; c < C; ++c) dot += static_cast<double>(v[k * C + c]) * e[n * C + c];
        s[k * N + n] = static_cast<float>(sigmoid(dot));
      }
  }
  return Tensor::from_f32({K, N}, std::move(s));
}

namespace {

struct PredictionView {
  std::size_t K = 0, N = 0, P = 0;
  std::span<const float> S, M;

  std::span<const float> scores(std::size_t k) const { return S.subspan(k * N, N); }
  std::span<const float> logits(std::size_t k) const { return M.subspan(k * P, P); }
};

PredictionView view(const Tensor& S, const Tensor& mask_logits, const TargetSet& targets) {
  if (S.rank() != 2 || S.dtype() != DType::f32)
    throw Error(ErrorCode::shape_mismatch, "S must be a K x N f32 matrix");
  if (mask_logits.rank() != 3 || mask_logits.dtype() != DType::f32)
    throw Error(ErrorCode::shape_mismatch, "mask logits must be K x H x W f32");
  if (mask_logits.dim(0) != S.dim(0))
    throw Error(ErrorCode::shape_mismatch, "S and mask logits disagree on query count");
  if (targets.size() > 0 &&
      (targets.masks.dim(1) != mask_logits.dim(1) || targets.masks.dim(2) != mask_logits.dim(2)))
    throw Error(ErrorCode::shape_mismatch, "target masks and mask logits differ in size");
  PredictionView pv;
  pv.K = S.dim(0);
  pv.N = S.dim(1);
  pv.P = mask_logits.dim(1) * mask_logits.dim(2);
  pv.S = S.f32();
  pv.M = mask_logits.f32();
  return pv;
}

struct PairTerms {
  double cls, bce, dice, iou;
};

PairTerms pair_terms(const PredictionView& pv, std::size_t k, const TargetSet& targets,
                     std::size_t t, const CostWeights& w, bool with_iou,
                     std::vector<float>& prob) {
  const auto logits = pv.logits(k);
  const auto y = targets.mask(t);
  for (std::size_t p = 0; p < pv.P; ++p) prob[p] = sigmoid(logits[p]);
  const std::span<const float> m(prob);
  PairTerms r{};
  r.cls = w.w_cls * static_cast<double>(focal_loss<float>(pv.scores(k), targets.class_ids[t],
                                                          w.focal_alpha, w.focal_gamma));
  r.bce = w.w_bce * static_cast<double>(bce_mask<float>(logits, y));
  r.dice = w.w_dice * static_cast<double>(dice_loss<float>(m, y, w.eps));
  r.iou = with_iou ? w.w_iou * static_cast<double>(iou_loss<float>(m, y, w.eps)) : 0.0;
  return r;
}

}  // namespace

CostMatrix match_cost_matrix(const Tensor& S, const Tensor& mask_logits, const TargetSet& targets,
                             Group group, std::size_t seen_count, const CostWeights& w) {
  w.validate();
  const auto pv = view(S, mask_logits, targets);
  const std::size_t T = targets.size();
  if (group == Group::combined)
    throw Error(ErrorCode::invalid_argument, "cost matrices are built per group");
  for (auto id : targets.class_ids) {
    if (id >= pv.N)
      throw Error(ErrorCode::out_of_range, "target class " + std::to_string(id) +
                                               " outside the joint embedding");
    const bool seen = id < seen_count;
    if (seen != (group == Group::seen))
      throw Error(ErrorCode::group_violation,
                  "target class " + std::to_string(id) + " does not belong to the " +
                      to_string(group) + " group");
  }
  if (T > pv.K)
    throw Error(ErrorCode::capacity, std::to_string(T) + " targets exceed " +
                                         std::to_string(pv.K) + " queries");
  CostMatrix cm;
  cm.queries = pv.K;
  cm.targets = T;
  cm.row_group = group;
  cm.target_ids = targets.class_ids;
  cm.values.resize(pv.K * T);
  std::vector<float> prob(pv.P);
  for (std::size_t k = 0; k < pv.K; ++k)
    for (std::size_t t = 0; t < T; ++t) {
      const auto r = pair_terms(pv, k, targets, t, w, false, prob);
      cm.values[k * T + t] = static_cast<float>(r.cls + r.bce + r.dice);
    }
  return cm;
}

MatchedLossBreakdown matched_loss(const Assignment& assignment, const Tensor& S,
                                  const Tensor& mask_logits, const TargetSet& targets,
                                  const CostWeights& w) {
  w.validate();
  const auto pv = view(S, mask_logits, targets);
  std::vector<bool> used(pv.K, false);
  for (const auto& pr : assignment.pairs) {
    if (pr.query >= pv.K)
      throw Error(ErrorCode::out_of_range, "assignment query " + std::to_string(pr.query) +
                                               " outside [0, " + std::to_string(pv.K) + ")");
    if (pr.target >= targets.size())
      throw Error(ErrorCode::out_of_range, "assignment target " + std::to_string(pr.target) +
                                               " outside [0, " +
                                               std::to_string(targets.size()) + ")");
    if (targets.class_ids[pr.target] >= pv.N)
      throw Error(ErrorCode::out_of_range, "target class outside the joint embedding");
    used[pr.query] = true;
  }

  MatchedLossBreakdown out;
  std::vector<float> prob(pv.P);
  for (const auto& pr : assignment.pairs) {
    const auto r = pair_terms(pv, pr.query, targets, pr.target, w, w.use_iou_in_loss, prob);
    out.cls += r.cls;
    out.bce += r.bce;
    out.dice += r.dice;
    out.iou += r.iou;
  }
  out.matched = assignment.pairs.size();
  if (out.matched) {
    const double inv = 1.0 / static_cast<double>(out.matched);
    out.cls *= inv;
    out.bce *= inv;
    out.dice *= inv;
    out.iou *= inv;
  }
  for (std::size_t k = 0; k < pv.K; ++k) {
    if (used[k]) continue;
    out.no_object += w.w_cls * static_cast<double>(focal_loss<float>(
                                   pv.scores(k), std::nullopt, w.focal_alpha, w.focal_gamma));
    ++out.unmatched;
  }
  if (out.unmatched) out.no_object /= static_cast<double>(out.unmatched);
  return out;
}

double cosine_loss(const Tensor& V, const JointEmbedding& E, const TargetSet& targets,
                   const Assignment& assignment) {
  if (V.rank() != 2 || V.dtype() != DType::f32)
    throw Error(ErrorCode::shape_mismatch, "V must be a K x C f32 matrix");
  const std::size_t K = V.dim(0), C = V.dim(1);
  const auto v = V.f32();
  double acc = 0.0;
  std::size_t n = 0;
  for (const auto& pr : assignment.pairs) {
    if (pr.group == Group::seen) continue;
    if (pr.query >= K || pr.target >= targets.size())
      throw Error(ErrorCode::out_of_range, "pair outside prediction / target range");
    const auto cls = targets.class_ids[pr.target];
    if (E.is_seen(cls) || cls >= E.rows())
      throw Error(ErrorCode::group_violation,
                  "cosine loss pair maps to non-candidate class " + std::to_string(cls));
    if (E.width() != C) throw Error(ErrorCode::shape_mismatch, "V and E widths differ");
    acc += cosine_distance<float>(v.subspan(pr.query * C, C), E.matrix.f32().subspan(cls * C, C));
    ++n;
  }
  return n ? acc / static_cast<double>(n) : 0.0;
}

double sm_loss(double matched, double cosine) { return matched + cosine; }

double mfe_loss(double ce, double focal, std::optional<double> global) {
  return ce + focal + global.value_or(0.0);
}

double total_loss(double sm, double mfe) { return sm + mfe; }

}  // namespace smseg
