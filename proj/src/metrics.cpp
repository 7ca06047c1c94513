#include "smseg/metrics.hpp"

#include <set>
#include <string>

#include "smseg/error.hpp"

namespace smseg {

void EvalConfig::validate() const {
  if (num_classes == 0) throw Error(ErrorCode::config, "num_classes must be positive");
  std::set<int> seen(seen_ids.begin(), seen_ids.end());
  for (int id : seen_ids)
    if (id < 0 || static_cast<std::size_t>(id) >= num_classes)
      throw Error(ErrorCode::config, "seen id " + std::to_string(id) + " outside [0, N)");
  for (int id : unseen_ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= num_classes)
      throw Error(ErrorCode::config, "unseen id " + std::to_string(id) + " outside [0, N)");
    if (seen.count(id))
      throw Error(ErrorCode::config, "class " + std::to_string(id) + " is both seen and unseen");
  }
  if (ignore_id >= 0 && static_cast<std::size_t>(ignore_id) < num_classes)
    throw Error(ErrorCode::config, "ignore id must lie outside [0, N)");
}

ConfusionMatrix& ConfusionMatrix::operator+=(const ConfusionMatrix& o) {
  if (o.classes != classes) throw Error(ErrorCode::shape_mismatch, "confusion matrix sizes differ");
  for (std::size_t i = 0; i < counts.size(); ++i) counts[i] += o.counts[i];
  return *this;
}

namespace {

std::vector<long> labels_of(const Tensor& t) {
  std::vector<long> out(t.numel());
  if (t.dtype() == DType::u8) {
    auto s = t.u8();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = s[i];
  } else {
    auto s = t.f32();
    for (std::size_t i = 0; i < out.size(); ++i) {
      if (s[i] != static_cast<float>(static_cast<long>(s[i])))
        throw Error(ErrorCode::invalid_argument, "label maps must hold integers");
      out[i] = static_cast<long>(s[i]);
    }
  }
  return out;
}

}  // namespace

ConfusionMatrix confusion_matrix(const Tensor& pred, const Tensor& gt, const EvalConfig& cfg) {
  cfg.validate();
  if (pred.rank() != 2 || pred.dims() != gt.dims())
    throw Error(ErrorCode::shape_mismatch, "pred and gt must be H x W maps of equal size");
  const auto p = labels_of(pred), g = labels_of(gt);
  const long n = static_cast<long>(cfg.num_classes);
  ConfusionMatrix cm(cfg.num_classes);
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (g[i] == cfg.ignore_id) continue;
    if (g[i] < 0 || g[i] >= n)
      throw Error(ErrorCode::out_of_range, "gt label " + std::to_string(g[i]) + " outside [0, N)");
    if (p[i] < 0 || p[i] >= n)
      throw Error(ErrorCode::out_of_range, "pred label " + std::to_string(p[i]) + " outside [0, N)");
    ++cm.counts[static_cast<std::size_t>(g[i] * n + p[i])];
  }
  return cm;
}

std::optional<double> class_iou(const ConfusionMatrix& cm, std::size_t c) {
  std::uint64_t row = 0, col = 0;
  for (std::size_t j = 0; j < cm.classes; ++j) {
    row += cm.at(c, j);
    col += cm.at(j, c);
  }
  const std::uint64_t tp = cm.at(c, c);
  const std::uint64_t uni = row + col - tp;
  if (uni == 0) return std::nullopt;
  return static_cast<double>(tp) / static_cast<double>(uni);
}

double subset_miou(const ConfusionMatrix& cm, const std::vector<int>& ids) {
  if (ids.empty()) throw Error(ErrorCode::invalid_argument, "subset mIoU needs at least one class");
  double sum = 0.0;
  std::size_t n = 0;
  for (int id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= cm.classes)
      throw Error(ErrorCode::out_of_range, "class id " + std::to_string(id) + " outside [0, N)");
    if (auto v = class_iou(cm, static_cast<std::size_t>(id))) {
      sum += *v;
      ++n;
    }
  }
  return n ? sum / static_cast<double>(n) : 0.0;
}

double hiou(double s, double u) {
  if (s < 0.0 || u < 0.0) throw Error(ErrorCode::invalid_argument, "hIoU inputs must be >= 0");
  if (s + u == 0.0) return 0.0;
  return 2.0 * s * u / (s + u);
}

MetricsReport evaluate(const ConfusionMatrix& cm, const EvalConfig& cfg) {
  cfg.validate();
  const double scale = cfg.percent ? 100.0 : 1.0;
  MetricsReport r;
  r.percent = cfg.percent;
  for (std::size_t c = 0; c < cm.classes; ++c) {
    auto v = class_iou(cm, c);
    if (v) *v *= scale;
    r.per_class_iou.push_back(v);
  }
  r.siou = cfg.seen_ids.empty() ? 0.0 : scale * subset_miou(cm, cfg.seen_ids);
  r.uiou = cfg.unseen_ids.empty() ? 0.0 : scale * subset_miou(cm, cfg.unseen_ids);
  r.hiou = hiou(r.siou, r.uiou);
  return r;
}

MetricsReport evaluate(const Tensor& pred, const Tensor& gt, const EvalConfig& cfg) {
  return evaluate(confusion_matrix(pred, gt, cfg), cfg);
}

}  // namespace smseg
