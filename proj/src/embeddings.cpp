#include "smseg/embeddings.hpp"

#include <cmath>
#include <set>
#include <string>

namespace smseg {

namespace {

void require_matrix(const Tensor& t, const char* what) {
  if (t.dtype() != DType::f32 || t.rank() != 2)
    throw Error(ErrorCode::shape_mismatch, std::string(what) + " must be an N x C f32 matrix");
}

}  // namespace

Tensor normalize_rows(const Tensor& m) {
  require_matrix(m, "embedding");
  const std::size_t n = m.dim(0), c = m.dim(1);
  Tensor out = m;
  auto d = out.f32();
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t k = 0; k < c; ++k) s += static_cast<double>(d[i * c + k]) * d[i * c + k];
    if (s <= 0.0) continue;
    const double inv = 1.0 / std::sqrt(s);
    for (std::size_t k = 0; k < c; ++k)
      d[i * c + k] = static_cast<float>(d[i * c + k] * inv);
  }
  return out;
}

ClassEmbeddings make_class_embeddings(const Tensor& matrix, std::vector<int> class_ids) {
  require_matrix(matrix, "class embedding");
  if (class_ids.size() != matrix.dim(0))
    throw Error(ErrorCode::shape_mismatch, "class id count does not match embedding rows");
  std::set<int> uniq(class_ids.begin(), class_ids.end());
  if (uniq.size() != class_ids.size())
    throw Error(ErrorCode::invalid_argument, "class ids must be unique");
  return {normalize_rows(matrix), std::move(class_ids)};
}

void check_disjoint(const ClassEmbeddings& seen, const ClassEmbeddings& unseen) {
  std::set<int> s(seen.class_ids.begin(), seen.class_ids.end());
  for (int id : unseen.class_ids)
    if (s.count(id))
      throw Error(ErrorCode::invalid_argument,
                  "class " + std::to_string(id) + " is both seen and unseen");
}

Tensor pool_region_embeddings(const Tensor& features, const CandidateMaskSet& masks) {
  if (features.dtype() != DType::f32 || features.rank() != 3)
    throw Error(ErrorCode::shape_mismatch, "features must be C x H x W f32");
  const std::size_t c = features.dim(0), h = features.dim(1), w = features.dim(2);
  if (masks.masks.rank() != 3 || masks.masks.dim(1) != h || masks.masks.dim(2) != w)
    throw Error(ErrorCode::shape_mismatch, "mask spatial size does not match features");
  const std::size_t U = masks.masks.dim(0), n = h * w;
  const auto f = features.f32();
  const auto mk = masks.masks.u8();
  std::vector<float> out(U * c);
  for (std::size_t u = 0; u < U; ++u) {
    std::vector<double> acc(c, 0.0);
    std::size_t area = 0;
    for (std::size_t p = 0; p < n; ++p) {
      if (!mk[u * n + p]) continue;
      ++area;
      for (std::size_t k = 0; k < c; ++k) acc[k] += f[k * n + p];
    }
    if (area == 0)
      throw Error(ErrorCode::invalid_argument, "candidate mask " + std::to_string(u) + " is empty");
    double s = 0.0;
    for (auto& v : acc) {
      v /= static_cast<double>(area);
      s += v * v;
    }
    const double inv = s > 0.0 ? 1.0 / std::sqrt(s) : 0.0;
    for (std::size_t k = 0; k < c; ++k) out[u * c + k] = static_cast<float>(acc[k] * inv);
  }
  return Tensor::from_f32({U, c}, std::move(out));
}

Tensor check_candidate_embeddings(const Tensor& cu, std::size_t expected_count,
                                  std::size_t expected_width) {
  require_matrix(cu, "candidate embeddings");
  if (cu.dim(0) != expected_count)
    throw Error(ErrorCode::shape_mismatch, "candidate embedding count " +
                                               std::to_string(cu.dim(0)) + " != U = " +
                                               std::to_string(expected_count));
  if (expected_width != 0 && cu.dim(1) != expected_width)
    throw Error(ErrorCode::shape_mismatch, "candidate embedding width " +
                                               std::to_string(cu.dim(1)) +
                                               " != seen embedding width " +
                                               std::to_string(expected_width));
  return normalize_rows(cu);
}

Tensor load_candidate_embeddings(const std::filesystem::path& path, std::size_t expected_count,
                                 std::size_t expected_width) {
  return check_candidate_embeddings(load_tensor(path), expected_count, expected_width);
}

JointEmbedding build_joint_embedding(const Tensor& seen, const Tensor& candidates) {
  require_matrix(seen, "A_s");
  require_matrix(candidates, "C_u");
  const std::size_t c = seen.dim(1);
  if (candidates.dim(1) != c && candidates.dim(0) != 0)
    throw Error(ErrorCode::shape_mismatch, "A_s and C_u widths differ");
  const auto a = normalize_rows(seen);
  const auto b = candidates.dim(0) ? normalize_rows(candidates) : candidates;
  std::vector<float> data(a.f32().begin(), a.f32().end());
  if (candidates.dim(0)) data.insert(data.end(), b.f32().begin(), b.f32().end());
  JointEmbedding e;
  e.seen_count = seen.dim(0);
  e.candidate_count = candidates.dim(0);
  e.matrix = Tensor::from_f32({e.rows(), c}, std::move(data));
  return e;
}

}  // namespace smseg
