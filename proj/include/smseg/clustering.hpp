#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "smseg/tensor.hpp"

namespace smseg {

enum class Metric { cosine, euclidean };

struct WindowConfig {
  std::vector<int> window_sizes{8, 16, 32};
  int kmeans_iters = 10;
  float kmeans_tol = 1e-4f;
  Metric metric = Metric::cosine;

  void validate() const;
};

struct SeedOrigin {
  int window = 0;
  std::size_t row = 0;
  std::size_t col = 0;
};

struct SeedSet {
  Tensor seeds;  // G x C
  std::vector<SeedOrigin> provenance;

  std::size_t size() const { return provenance.size(); }
};

struct ClusterResult {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::int32_t> assignments;  // H*W cluster ids, row-major
  Tensor centroids;                       // K x C
  std::vector<double> objective_trace;    // total distortion after each assignment step

  std::size_t num_clusters() const { return centroids.empty() ? 0 : centroids.dim(0); }
};

struct FusedMasks {
  Tensor masks;      // U x H x W, u8 {0,1}
  Tensor centroids;  // U x C
};

struct CandidateMaskSet {
  Tensor masks;      // U x H x W, u8 {0,1}
  Tensor centroids;  // U x C
  std::size_t count = 0;
};

/// Window start positions along one axis of the given extent: the progression
/// 0, r, 2r, ... with r = round(s/2), clipped to extent - s, plus extent - s
/// itself when the progression does not land on it.
std::vector<std::size_t> window_starts(std::size_t extent, int s);

/// Mean of O over every s x s window at the starts above, row-major over
/// (i, j). Sums accumulate in f64 in row-major window order and are rounded
/// to f32 once, after dividing by s^2.
SeedSet window_seeds(const Tensor& features, int s);

SeedSet multi_scale_seeds(const Tensor& features, const WindowConfig& cfg);

/// Lloyd iterations from the given seeds. With the cosine metric pixels are
/// L2-normalised and centroids renormalised after every update. Empty
/// clusters are dropped and ids compacted in ascending order.
ClusterResult kmeans(const Tensor& features, const SeedSet& seeds, const WindowConfig& cfg);

/// Union-find merge of clusters whose centroid cosine is >= tau. Merging is
/// repeated on the merged centroids until no pair qualifies, so the output is
/// a fixed point of the operation.
FusedMasks fuse_masks(const ClusterResult& result, float tau = 0.9f);

/// Rebuilds a ClusterResult view (one cluster per mask) from fused masks.
ClusterResult as_cluster_result(const FusedMasks& fused);

CandidateMaskSet restrict_candidates(const FusedMasks& fused, const Tensor& ignore_region,
                                     std::size_t min_area = 16);

/// Assignment map stored as an H x W f32 tensor (ids are exact below 2^24).
Tensor assignments_tensor(const ClusterResult& r);
ClusterResult cluster_result_from_tensors(const Tensor& assignments, const Tensor& centroids);

}  // namespace smseg
