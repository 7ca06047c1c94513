#pragma once

#include <cstddef>
#include <filesystem>
#include <vector>

#include "smseg/clustering.hpp"
#include "smseg/tensor.hpp"

namespace smseg {

/// Rows of A_s or A_u with their dataset class ids.
struct ClassEmbeddings {
  Tensor matrix;  // N x C_e, unit rows
  std::vector<int> class_ids;
};

/// E = cat(A_s, C_u). Joint index n < seen_count is a seen class, otherwise
/// candidate n - seen_count.
struct JointEmbedding {
  Tensor matrix;  // (N_s + U) x C_e
  std::size_t seen_count = 0;
  std::size_t candidate_count = 0;

  std::size_t rows() const { return seen_count + candidate_count; }
  std::size_t width() const { return matrix.rank() == 2 ? matrix.dim(1) : 0; }
  bool is_seen(std::size_t n) const { return n < seen_count; }
};

/// L2-normalises every row of an N x C f32 matrix. Zero rows stay zero.
Tensor normalize_rows(const Tensor& m);

ClassEmbeddings make_class_embeddings(const Tensor& matrix, std::vector<int> class_ids);

/// Check that seen and unseen id sets are disjoint.
void check_disjoint(const ClassEmbeddings& seen, const ClassEmbeddings& unseen);

/// Stand-in for the CLIP CLS path: row u = normalize(mean of O over mask u).
Tensor pool_region_embeddings(const Tensor& features, const CandidateMaskSet& masks);

/// Imports externally computed candidate embeddings; rows are renormalised.
/// expected_width = 0 skips the width check.
Tensor load_candidate_embeddings(const std::filesystem::path& path, std::size_t expected_count,
                                 std::size_t expected_width);
Tensor check_candidate_embeddings(const Tensor& cu, std::size_t expected_count,
                                  std::size_t expected_width);

JointEmbedding build_joint_embedding(const Tensor& seen, const Tensor& candidates);

}  // namespace smseg
