#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <vector>

#include "smseg/tensor.hpp"

namespace smseg {

struct EvalConfig {
  std::size_t num_classes = 0;
  std::vector<int> seen_ids;
  std::vector<int> unseen_ids;
  int ignore_id = 255;
  bool percent = true;

  void validate() const;
};

/// counts[g * N + p]: pixels with ground truth g predicted as p.
struct ConfusionMatrix {
  std::size_t classes = 0;
  std::vector<std::uint64_t> counts;

  explicit ConfusionMatrix(std::size_t n = 0) : classes(n), counts(n * n, 0) {}
  std::uint64_t at(std::size_t g, std::size_t p) const { return counts[g * classes + p]; }
  ConfusionMatrix& operator+=(const ConfusionMatrix& o);
};

/// Pixels whose ground truth equals cfg.ignore_id are skipped; any other label
/// outside [0, N) is an error.
ConfusionMatrix confusion_matrix(const Tensor& pred, const Tensor& gt, const EvalConfig& cfg);

/// TP / (TP + FP + FN), or nullopt for a class absent from both gt and pred.
std::optional<double> class_iou(const ConfusionMatrix& cm, std::size_t c);

/// Mean IoU over ids, as a fraction; classes absent from both gt and pred are
/// left out of the mean. Returns 0 if none of the ids is present.
double subset_miou(const ConfusionMatrix& cm, const std::vector<int>& ids);

/// 2 s u / (s + u); 0 when both are 0.
double hiou(double s, double u);

struct MetricsReport {
  std::vector<std::optional<double>> per_class_iou;
  double siou = 0.0;
  double uiou = 0.0;
  double hiou = 0.0;
  bool percent = true;
};

MetricsReport evaluate(const ConfusionMatrix& cm, const EvalConfig& cfg);
MetricsReport evaluate(const Tensor& pred, const Tensor& gt, const EvalConfig& cfg);

}  // namespace smseg
