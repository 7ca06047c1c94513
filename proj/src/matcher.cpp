#include "smseg/matcher.hpp"

#include <cmath>
#include <limits>
#include <string>

namespace smseg {

const char* to_string(Group g) {
  switch (g) {
    case Group::seen: return "seen";
    case Group::candidate: return "candidate";
    case Group::combined: return "combined";
  }
  return "unknown";
}

std::span<const std::uint8_t> TargetSet::mask(std::size_t t) const {
  return masks.u8().subspan(t * pixels(), pixels());
}

TargetSet make_targets(std::vector<std::size_t> class_ids, Tensor masks) {
  if (masks.dtype() != DType::u8 || masks.rank() != 3)
    throw Error(ErrorCode::shape_mismatch, "target masks must be T x H x W u8");
  if (masks.dim(0) != class_ids.size())
    throw Error(ErrorCode::shape_mismatch, "target mask count does not match class ids");
  for (auto v : masks.u8())
    if (v > 1) throw Error(ErrorCode::invalid_argument, "target masks must be binary");
  TargetSet t;
  t.class_ids = std::move(class_ids);
  t.masks = std::move(masks);
  return t;
}

TargetSet concat_targets(const TargetSet& a, const TargetSet& b) {
  if (a.size() == 0) return b;
  if (b.size() == 0) return a;
  if (a.masks.dim(1) != b.masks.dim(1) || a.masks.dim(2) != b.masks.dim(2))
    throw Error(ErrorCode::shape_mismatch, "target mask sizes differ");
  std::vector<std::size_t> ids = a.class_ids;
  ids.insert(ids.end(), b.class_ids.begin(), b.class_ids.end());
  std::vector<std::uint8_t> data(a.masks.u8().begin(), a.masks.u8().end());
  data.insert(data.end(), b.masks.u8().begin(), b.masks.u8().end());
  return make_targets(std::move(ids), Tensor::from_u8({a.size() + b.size(), a.masks.dim(1),
                                                       a.masks.dim(2)},
                                                      std::move(data)));
}

double Assignment::total_cost() const {
  double s = 0.0;
  for (const auto& p : pairs) s += p.cost;
  return s;
}

namespace {

// Element of Z^T x R ordered lexicographically: (primary cost, q_0, ..., q_{T-1}).
// Running the potentials-based solver over this group yields the optimal
// assignment with lexicographically smallest query sequence.
class LexCosts {
 public:
  LexCosts(std::size_t count, std::size_t width) : width_(width + 1), data_(count * width_, 0.0) {}

  double* operator[](std::size_t i) { return &data_[i * width_]; }
  const double* operator[](std::size_t i) const { return &data_[i * width_]; }
  std::size_t width() const { return width_; }

 private:
  std::size_t width_;
  std::vector<double> data_;
};

bool lex_less(const double* a, const double* b, std::size_t w) {
  for (std::size_t i = 0; i < w; ++i) {
    if (a[i] < b[i]) return true;
    if (a[i] > b[i]) return false;
  }
  return false;
}

}  // namespace

Assignment hungarian(std::span<const float> cost, std::size_t queries, std::size_t targets) {
  if (cost.size() != queries * targets)
    throw Error(ErrorCode::shape_mismatch, "cost buffer does not match K x T");
  if (targets > queries)
    throw Error(ErrorCode::capacity, std::to_string(targets) + " targets exceed " +
                                         std::to_string(queries) + " queries");
  for (float c : cost)
    if (!std::isfinite(c)) throw Error(ErrorCode::non_finite, "cost matrix has a non-finite entry");

  Assignment out;
  const std::size_t n = targets, m = queries, w = targets + 1;
  if (n > 0) {
    // 1-based rows (targets) and columns (queries), following the classic
    // shortest-augmenting-path formulation.
    auto entry = [&](std::size_t i, std::size_t j, double* dst) {
      std::fill(dst, dst + w, 0.0);
      dst[0] = cost[(j - 1) * targets + (i - 1)];
      dst[i] = static_cast<double>(j - 1);
    };
    LexCosts u(n + 1, n), v(m + 1, n), minv(m + 1, n);
    std::vector<std::size_t> p(m + 1, 0), way(m + 1, 0);
    std::vector<bool> used(m + 1), inf(m + 1);
    std::vector<double> cur(w), delta(w);
    for (std::size_t i = 1; i <= n; ++i) {
      p[0] = i;
      std::size_t j0 = 0;
      std::fill(used.begin(), used.end(), false);
      std::fill(inf.begin(), inf.end(), true);
      do {
        used[j0] = true;
        const std::size_t i0 = p[j0];
        bool delta_inf = true;
        std::size_t j1 = 0;
        for (std::size_t j = 1; j <= m; ++j) {
          if (used[j]) continue;
          entry(i0, j, cur.data());
          for (std::size_t q = 0; q < w; ++q) cur[q] -= u[i0][q] + v[j][q];
          if (inf[j] || lex_less(cur.data(), minv[j], w)) {
            std::copy(cur.begin(), cur.end(), minv[j]);
            inf[j] = false;
            way[j] = j0;
          }
          if (delta_inf || lex_less(minv[j], delta.data(), w)) {
            std::copy(minv[j], minv[j] + w, delta.begin());
            delta_inf = false;
            j1 = j;
          }
        }
        for (std::size_t j = 0; j <= m; ++j) {
          if (used[j]) {
            for (std::size_t q = 0; q < w; ++q) {
              u[p[j]][q] += delta[q];
              v[j][q] -= delta[q];
            }
          } else if (!inf[j]) {
            for (std::size_t q = 0; q < w; ++q) minv[j][q] -= delta[q];
          }
        }
        j0 = j1;
      } while (p[j0] != 0);
      do {
        const std::size_t j1 = way[j0];
        p[j0] = p[j1];
        j0 = j1;
      } while (j0);
    }
    std::vector<std::size_t> query_of(n);
    for (std::size_t j = 1; j <= m; ++j)
      if (p[j]) query_of[p[j] - 1] = j - 1;
    for (std::size_t t = 0; t < n; ++t)
      out.pairs.push_back({query_of[t], t, cost[query_of[t] * targets + t], Group::seen});
  }
  std::vector<bool> matched(queries, false);
  for (const auto& pr : out.pairs) matched[pr.query] = true;
  for (std::size_t k = 0; k < queries; ++k)
    if (!matched[k]) out.unmatched_queries.push_back(k);
  return out;
}

Assignment hungarian(const CostMatrix& cost) {
  auto a = hungarian(cost.values, cost.queries, cost.targets);
  a.group = cost.row_group;
  for (auto& p : a.pairs) p.group = cost.row_group;
  return a;
}

SplitMatchResult split_match(const GroupPredictions& seen_preds,
                             const GroupPredictions& cand_preds, const TargetSet& seen_targets,
                             const TargetSet& cand_targets, const JointEmbedding& E,
                             const CostWeights& w) {
  const std::size_t ks = seen_preds.size(), ku = cand_preds.size();
  if (seen_targets.size() > ks)
    throw Error(ErrorCode::capacity, std::to_string(seen_targets.size()) +
                                         " seen targets exceed " + std::to_string(ks) +
                                         " seen queries");
  if (cand_targets.size() > ku)
    throw Error(ErrorCode::capacity, std::to_string(cand_targets.size()) +
                                         " candidate targets exceed " + std::to_string(ku) +
                                         " candidate queries");

  SplitMatchResult r;
  auto solve = [&](const GroupPredictions& preds, const TargetSet& targets, Group g) {
    if (preds.size() == 0) {
      Assignment a;
      a.group = g;
      return a;
    }
    const auto S = class_similarity(preds.V, E);
    return hungarian(match_cost_matrix(S, preds.M, targets, g, E.seen_count, w));
  };
  r.seen = solve(seen_preds, seen_targets, Group::seen);
  r.candidate = solve(cand_preds, cand_targets, Group::candidate);

  r.combined.group = Group::combined;
  r.combined.pairs = r.seen.pairs;
  for (auto pr : r.candidate.pairs) {
    pr.query += ks;
    pr.target += seen_targets.size();
    r.combined.pairs.push_back(pr);
  }
  std::vector<bool> matched(ks + ku, false);
  for (const auto& pr : r.combined.pairs) matched[pr.query] = true;
  for (std::size_t k = 0; k < ks + ku; ++k)
    if (!matched[k]) r.combined.unmatched_queries.push_back(k);
  r.targets = concat_targets(seen_targets, cand_targets);
  return r;
}

}  // namespace smseg
