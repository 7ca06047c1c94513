#include "smseg/clustering.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "smseg/parallel.hpp"

namespace smseg {

void WindowConfig::validate() const {
  if (window_sizes.empty()) throw Error(ErrorCode::invalid_argument, "no window sizes");
  for (int s : window_sizes)
    if (s < 1) throw Error(ErrorCode::invalid_argument, "window size must be positive");
  if (kmeans_iters < 1) throw Error(ErrorCode::invalid_argument, "kmeans_iters must be >= 1");
  if (!(kmeans_tol > 0.0f)) throw Error(ErrorCode::invalid_argument, "kmeans_tol must be > 0");
}

namespace {

void require_chw(const Tensor& t, const char* what) {
  if (t.dtype() != DType::f32 || t.rank() != 3)
    throw Error(ErrorCode::shape_mismatch, std::string(what) + " must be a C x H x W f32 tensor");
}

// Pixel-major copy of a C x H x W map in double precision.
std::vector<double> pixel_rows(const Tensor& features, bool normalise) {
  const std::size_t c = features.dim(0);
  const std::size_t n = features.dim(1) * features.dim(2);
  const auto src = features.f32();
  std::vector<double> x(n * c);
  parallel_for(n, [&](std::size_t p) {
    double* row = &x[p * c];
    for (std::size_t k = 0; k < c; ++k) row[k] = src[k * n + p];
    if (normalise) {
      double s = 0.0;
      for (std::size_t k = 0; k < c; ++k) s += row[k] * row[k];
      if (s > 0.0) {
        const double inv = 1.0 / std::sqrt(s);
        for (std::size_t k = 0; k < c; ++k) row[k] *= inv;
      }
    }
  });
  return x;
}

bool normalise_row(double* row, std::size_t c) {
  double s = 0.0;
  for (std::size_t k = 0; k < c; ++k) s += row[k] * row[k];
  if (!(s > 0.0)) return false;
  const double inv = 1.0 / std::sqrt(s);
  for (std::size_t k = 0; k < c; ++k) row[k] *= inv;
  return true;
}

struct LloydState {
  std::vector<double> centroids;  // K x C
  std::vector<std::int32_t> labels;
  double objective = 0.0;
};

void assign(const std::vector<double>& x, std::size_t n, std::size_t c, Metric metric,
            LloydState& st) {
  const std::size_t k = st.centroids.size() / c;
  st.labels.assign(n, 0);
  std::vector<double> best(n);
  parallel_for(n, [&](std::size_t p) {
    const double* xp = &x[p * c];
    double bd = 0.0;
    std::int32_t bi = -1;
    for (std::size_t j = 0; j < k; ++j) {
      const double* cj = &st.centroids[j * c];
      double d = 0.0;
      if (metric == Metric::cosine) {
        double dot = 0.0;
        for (std::size_t q = 0; q < c; ++q) dot += xp[q] * cj[q];
        d = 1.0 - dot;
      } else {
        for (std::size_t q = 0; q < c; ++q) {
          const double e = xp[q] - cj[q];
          d += e * e;
        }
      }
      if (bi < 0 || d < bd) {
        bd = d;
        bi = static_cast<std::int32_t>(j);
      }
    }
    st.labels[p] = bi;
    best[p] = bd;
  });
  st.objective = std::accumulate(best.begin(), best.end(), 0.0);
}

// Removes clusters with no members, preserving relative order.
void compact(std::size_t c, LloydState& st) {
  const std::size_t k = st.centroids.size() / c;
  std::vector<std::size_t> count(k, 0);
  for (auto l : st.labels) ++count[static_cast<std::size_t>(l)];
  std::vector<std::int32_t> remap(k, -1);
  std::vector<double> kept;
  std::int32_t next = 0;
  for (std::size_t j = 0; j < k; ++j) {
    if (count[j] == 0) continue;
    remap[j] = next++;
    kept.insert(kept.end(), st.centroids.begin() + static_cast<std::ptrdiff_t>(j * c),
                st.centroids.begin() + static_cast<std::ptrdiff_t>((j + 1) * c));
  }
  for (auto& l : st.labels) l = remap[static_cast<std::size_t>(l)];
  st.centroids = std::move(kept);
}

void update(const std::vector<double>& x, std::size_t n, std::size_t c, Metric metric,
            LloydState& st) {
  const std::size_t k = st.centroids.size() / c;
  std::vector<double> sum(k * c, 0.0);
  std::vector<std::size_t> count(k, 0);
  for (std::size_t p = 0; p < n; ++p) {
    const auto j = static_cast<std::size_t>(st.labels[p]);
    ++count[j];
    for (std::size_t q = 0; q < c; ++q) sum[j * c + q] += x[p * c + q];
  }
  for (std::size_t j = 0; j < k; ++j) {
    if (count[j] == 0) continue;
    double* row = &sum[j * c];
    for (std::size_t q = 0; q < c; ++q) row[q] /= static_cast<double>(count[j]);
    if (metric == Metric::cosine && !normalise_row(row, c)) continue;  // keep previous centroid
    std::copy(row, row + c, st.centroids.begin() + static_cast<std::ptrdiff_t>(j * c));
  }
}

std::vector<std::size_t> pixel_counts(const ClusterResult& r) {
  std::vector<std::size_t> count(r.num_clusters(), 0);
  for (auto l : r.assignments) ++count[static_cast<std::size_t>(l)];
  return count;
}

double cosine(const double* a, const double* b, std::size_t c) {
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t q = 0; q < c; ++q) {
    ab += a[q] * b[q];
    aa += a[q] * a[q];
    bb += b[q] * b[q];
  }
  if (aa <= 0.0 || bb <= 0.0) return 0.0;
  return ab / (std::sqrt(aa) * std::sqrt(bb));
}

struct DisjointSets {
  std::vector<std::size_t> parent;
  explicit DisjointSets(std::size_t n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }
  std::size_t find(std::size_t i) {
    while (parent[i] != i) i = parent[i] = parent[parent[i]];
    return i;
  }
  // Root is always the smaller index.
  void unite(std::size_t a, std::size_t b) {
    a = find(a);
    b = find(b);
    if (a == b) return;
    if (b < a) std::swap(a, b);
    parent[b] = a;
  }
};

}  // namespace

std::vector<std::size_t> window_starts(std::size_t extent, int s) {
  if (s < 1 || static_cast<std::size_t>(s) > extent)
    throw Error(ErrorCode::invalid_argument, "window size " + std::to_string(s) +
                                                 " exceeds extent " + std::to_string(extent));
  const auto last = extent - static_cast<std::size_t>(s);
  const auto stride = static_cast<std::size_t>(std::lround(s / 2.0));
  std::vector<std::size_t> starts;
  for (std::size_t i = 0; i <= last; i += stride) starts.push_back(i);
  if (starts.back() != last) starts.push_back(last);
  return starts;
}

SeedSet window_seeds(const Tensor& features, int s) {
  require_chw(features, "features");
  const std::size_t c = features.dim(0), h = features.dim(1), w = features.dim(2);
  if (s < 1 || static_cast<std::size_t>(s) > std::min(h, w))
    throw Error(ErrorCode::invalid_argument,
                "window size " + std::to_string(s) + " exceeds min(H, W) = " +
                    std::to_string(std::min(h, w)));
  const auto rows = window_starts(h, s);
  const auto cols = window_starts(w, s);
  const auto src = features.f32();
  const auto ss = static_cast<std::size_t>(s);
  const double area = static_cast<double>(ss * ss);

  SeedSet out;
  out.provenance.reserve(rows.size() * cols.size());
  for (auto i : rows)
    for (auto j : cols) out.provenance.push_back({s, i, j});
  std::vector<float> data(out.provenance.size() * c);
  parallel_for(out.provenance.size(), [&](std::size_t g) {
    const auto& o = out.provenance[g];
    for (std::size_t k = 0; k < c; ++k) {
      const float* plane = src.data() + k * h * w;
      double acc = 0.0;
      for (std::size_t u = o.row; u < o.row + ss; ++u)
        for (std::size_t v = o.col; v < o.col + ss; ++v) acc += plane[u * w + v];
      data[g * c + k] = static_cast<float>(acc / area);
    }
  });
  out.seeds = Tensor::from_f32({out.provenance.size(), c}, std::move(data));
  return out;
}

SeedSet multi_scale_seeds(const Tensor& features, const WindowConfig& cfg) {
  cfg.validate();
  require_chw(features, "features");
  const std::size_t c = features.dim(0);
  SeedSet out;
  std::vector<float> data;
  for (int s : cfg.window_sizes) {
    auto part = window_seeds(features, s);
    auto p = part.seeds.f32();
    data.insert(data.end(), p.begin(), p.end());
    out.provenance.insert(out.provenance.end(), part.provenance.begin(), part.provenance.end());
  }
  out.seeds = Tensor::from_f32({out.provenance.size(), c}, std::move(data));
  return out;
}

ClusterResult kmeans(const Tensor& features, const SeedSet& seeds, const WindowConfig& cfg) {
  cfg.validate();
  require_chw(features, "features");
  if (seeds.size() == 0 || seeds.seeds.empty())
    throw Error(ErrorCode::invalid_argument, "kmeans needs at least one seed");
  const std::size_t c = features.dim(0), h = features.dim(1), w = features.dim(2);
  if (seeds.seeds.rank() != 2 || seeds.seeds.dim(1) != c)
    throw Error(ErrorCode::shape_mismatch, "seed width does not match feature channels");
  const std::size_t n = h * w;
  const bool cosine_metric = cfg.metric == Metric::cosine;
  const auto x = pixel_rows(features, cosine_metric);

  LloydState st;
  const auto sd = seeds.seeds.f32();
  st.centroids.assign(sd.begin(), sd.end());
  if (cosine_metric) {
    const std::size_t k = st.centroids.size() / c;
    for (std::size_t j = 0; j < k; ++j) normalise_row(&st.centroids[j * c], c);
  }

  ClusterResult out;
  out.height = h;
  out.width = w;
  assign(x, n, c, cfg.metric, st);
  compact(c, st);
  out.objective_trace.push_back(st.objective);

  for (int it = 0; it < cfg.kmeans_iters; ++it) {
    LloydState next = st;
    update(x, n, c, cfg.metric, next);
    assign(x, n, c, cfg.metric, next);
    compact(c, next);
    const double prev = st.objective;
    // A rounding-level increase means Lloyd has converged; keep the prior state.
    if (next.objective > prev) break;
    st = std::move(next);
    out.objective_trace.push_back(st.objective);
    if (prev - st.objective < static_cast<double>(cfg.kmeans_tol)) break;
  }

  const std::size_t k = st.centroids.size() / c;
  std::vector<float> cent(st.centroids.size());
  std::transform(st.centroids.begin(), st.centroids.end(), cent.begin(),
                 [](double v) { return static_cast<float>(v); });
  out.centroids = Tensor::from_f32({k, c}, std::move(cent));
  out.assignments = std::move(st.labels);
  return out;
}

FusedMasks fuse_masks(const ClusterResult& result, float tau) {
  if (!(tau > 0.0f && tau <= 1.0f))
    throw Error(ErrorCode::invalid_argument, "tau must lie in (0, 1]");
  const std::size_t k0 = result.num_clusters();
  if (k0 == 0) throw Error(ErrorCode::invalid_argument, "fuse_masks needs at least one cluster");
  const std::size_t c = result.centroids.dim(1);
  const std::size_t n = result.height * result.width;
  if (result.assignments.size() != n)
    throw Error(ErrorCode::shape_mismatch, "assignment map size does not match H x W");
  for (auto l : result.assignments)
    if (l < 0 || static_cast<std::size_t>(l) >= k0)
      throw Error(ErrorCode::out_of_range, "assignment id outside [0, K)");

  const auto counts0 = pixel_counts(result);
  const auto cent0 = result.centroids.f32();

  // Groups: live clusters with their member original ids, pixel count and centroid.
  struct Group {
    std::vector<std::size_t> members;
    double count = 0.0;
    std::vector<double> centroid;
  };
  std::vector<Group> groups;
  for (std::size_t j = 0; j < k0; ++j) {
    if (counts0[j] == 0) continue;
    Group g;
    g.members = {j};
    g.count = static_cast<double>(counts0[j]);
    g.centroid.assign(cent0.begin() + static_cast<std::ptrdiff_t>(j * c),
                      cent0.begin() + static_cast<std::ptrdiff_t>((j + 1) * c));
    groups.push_back(std::move(g));
  }

  for (bool merged = true; merged;) {
    merged = false;
    const std::size_t m = groups.size();
    DisjointSets ds(m);
    for (std::size_t a = 0; a < m; ++a)
      for (std::size_t b = a + 1; b < m; ++b)
        if (cosine(groups[a].centroid.data(), groups[b].centroid.data(), c) >=
            static_cast<double>(tau)) {
          ds.unite(a, b);
          merged = true;
        }
    if (!merged) break;
    std::vector<Group> next;
    std::vector<std::ptrdiff_t> slot(m, -1);
    for (std::size_t a = 0; a < m; ++a) {
      const auto root = ds.find(a);
      if (slot[root] < 0) {
        slot[root] = static_cast<std::ptrdiff_t>(next.size());
        next.push_back(Group{{}, 0.0, std::vector<double>(c, 0.0)});
      }
      auto& g = next[static_cast<std::size_t>(slot[root])];
      g.members.insert(g.members.end(), groups[a].members.begin(), groups[a].members.end());
      for (std::size_t q = 0; q < c; ++q) g.centroid[q] += groups[a].count * groups[a].centroid[q];
      g.count += groups[a].count;
    }
    for (auto& g : next) {
      for (auto& v : g.centroid) v /= g.count;
      normalise_row(g.centroid.data(), c);
      std::sort(g.members.begin(), g.members.end());
    }
    groups = std::move(next);
  }
  // Roots are smallest indices and groups start in id order, so output order is
  // ascending smallest member id already.
  std::sort(groups.begin(), groups.end(),
            [](const Group& a, const Group& b) { return a.members.front() < b.members.front(); });

  std::vector<std::int32_t> owner(k0, -1);
  for (std::size_t u = 0; u < groups.size(); ++u)
    for (auto j : groups[u].members) owner[j] = static_cast<std::int32_t>(u);

  const std::size_t U = groups.size();
  FusedMasks out;
  out.masks = Tensor::zeros(DType::u8, {U, result.height, result.width});
  auto mk = out.masks.u8();
  for (std::size_t p = 0; p < n; ++p) {
    const auto u = owner[static_cast<std::size_t>(result.assignments[p])];
    mk[static_cast<std::size_t>(u) * n + p] = 1;
  }
  std::vector<float> cent(U * c);
  for (std::size_t u = 0; u < U; ++u) {
    // Single-member groups keep their centroid bit-exact.
    if (groups[u].members.size() == 1) {
      const auto j = groups[u].members[0];
      std::copy(cent0.begin() + static_cast<std::ptrdiff_t>(j * c),
                cent0.begin() + static_cast<std::ptrdiff_t>((j + 1) * c),
                cent.begin() + static_cast<std::ptrdiff_t>(u * c));
    } else {
      for (std::size_t q = 0; q < c; ++q)
        cent[u * c + q] = static_cast<float>(groups[u].centroid[q]);
    }
  }
  out.centroids = Tensor::from_f32({U, c}, std::move(cent));
  return out;
}

ClusterResult as_cluster_result(const FusedMasks& fused) {
  if (fused.masks.rank() != 3 || fused.masks.dtype() != DType::u8)
    throw Error(ErrorCode::shape_mismatch, "masks must be U x H x W u8");
  const std::size_t U = fused.masks.dim(0), h = fused.masks.dim(1), w = fused.masks.dim(2);
  const std::size_t n = h * w;
  ClusterResult r;
  r.height = h;
  r.width = w;
  r.assignments.assign(n, -1);
  const auto mk = fused.masks.u8();
  for (std::size_t u = 0; u < U; ++u)
    for (std::size_t p = 0; p < n; ++p)
      if (mk[u * n + p] && r.assignments[p] < 0) r.assignments[p] = static_cast<std::int32_t>(u);
  for (auto a : r.assignments)
    if (a < 0) throw Error(ErrorCode::invalid_argument, "masks do not cover every pixel");
  r.centroids = fused.centroids;
  return r;
}

CandidateMaskSet restrict_candidates(const FusedMasks& fused, const Tensor& ignore_region,
                                     std::size_t min_area) {
  if (fused.masks.rank() != 3)
    throw Error(ErrorCode::shape_mismatch, "masks must be U x H x W");
  const std::size_t U = fused.masks.dim(0), h = fused.masks.dim(1), w = fused.masks.dim(2);
  if (ignore_region.rank() != 2 || ignore_region.dim(0) != h || ignore_region.dim(1) != w)
    throw Error(ErrorCode::shape_mismatch, "ignore region must be H x W matching the masks");
  const std::size_t n = h * w;
  const std::size_t c = fused.centroids.dim(1);
  std::vector<std::uint8_t> region(n);
  if (ignore_region.dtype() == DType::u8) {
    auto s = ignore_region.u8();
    for (std::size_t p = 0; p < n; ++p) region[p] = s[p] != 0;
  } else {
    auto s = ignore_region.f32();
    for (std::size_t p = 0; p < n; ++p) region[p] = s[p] != 0.0f;
  }

  const auto mk = fused.masks.u8();
  const auto cent = fused.centroids.f32();
  std::vector<std::uint8_t> masks;
  std::vector<float> cents;
  std::size_t kept = 0;
  for (std::size_t u = 0; u < U; ++u) {
    std::vector<std::uint8_t> m(n);
    std::size_t area = 0;
    for (std::size_t p = 0; p < n; ++p) {
      m[p] = static_cast<std::uint8_t>(mk[u * n + p] && region[p]);
      area += m[p];
    }
    if (area < min_area || area == 0) continue;
    masks.insert(masks.end(), m.begin(), m.end());
    cents.insert(cents.end(), cent.begin() + static_cast<std::ptrdiff_t>(u * c),
                 cent.begin() + static_cast<std::ptrdiff_t>((u + 1) * c));
    ++kept;
  }
  CandidateMaskSet out;
  out.count = kept;
  out.masks = Tensor::from_u8({kept, h, w}, std::move(masks));
  out.centroids = Tensor::from_f32({kept, c}, std::move(cents));
  return out;
}

Tensor assignments_tensor(const ClusterResult& r) {
  std::vector<float> data(r.assignments.size());
  std::transform(r.assignments.begin(), r.assignments.end(), data.begin(),
                 [](std::int32_t v) { return static_cast<float>(v); });
  return Tensor::from_f32({r.height, r.width}, std::move(data));
}

ClusterResult cluster_result_from_tensors(const Tensor& assignments, const Tensor& centroids) {
  if (assignments.rank() != 2 || assignments.dtype() != DType::f32)
    throw Error(ErrorCode::shape_mismatch, "assignment map must be H x W f32");
  if (centroids.rank() != 2 || centroids.dtype() != DType::f32)
    throw Error(ErrorCode::shape_mismatch, "centroids must be K x C f32");
  ClusterResult r;
  r.height = assignments.dim(0);
  r.width = assignments.dim(1);
  r.centroids = centroids;
  const auto k = static_cast<float>(centroids.dim(0));
  for (float v : assignments.f32()) {
    if (v != std::floor(v) || v < 0.0f || v >= k)
      throw Error(ErrorCode::out_of_range, "assignment id is not an integer in [0, K)");
    r.assignments.push_back(static_cast<std::int32_t>(v));
  }
  return r;
}

}  // namespace smseg
