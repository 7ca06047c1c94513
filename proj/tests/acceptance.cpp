// Acceptance suite: one PASS/FAIL line per criterion.
#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "smseg/clustering.hpp"
#include "smseg/decoder.hpp"
#include "smseg/gradcheck.hpp"
#include "smseg/losses.hpp"
#include "smseg/matcher.hpp"
#include "smseg/metrics.hpp"
#include "smseg/parallel.hpp"
#include "smseg/pipeline.hpp"
#include "smseg/synth.hpp"

using namespace smseg;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
};

struct Context {
  fs::path cli;
  fs::path work;
};

// Records the first few failures, counts the rest.
class Failures {
 public:
  void add(const std::string& what) {
    if (shown_ < 5) msgs_ << (shown_ ? "; " : "") << what;
    ++shown_;
  }
  bool ok() const { return shown_ == 0; }
  Outcome outcome(const std::string& summary) const {
    if (ok()) return {true, summary};
    return {false, std::to_string(shown_) + " failure(s): " + msgs_.str()};
  }

 private:
  std::size_t shown_ = 0;
  std::ostringstream msgs_;
};

std::string fmt(double v, int prec = 4) {
  char b[64];
  std::snprintf(b, sizeof b, "%.*f", prec, v);
  return b;
}

Tensor randn(std::mt19937& rng, Dims dims, float sd = 1.0f) {
  std::normal_distribution<float> nd(0.0f, sd);
  std::vector<float> v(product(dims));
  for (auto& x : v) x = nd(rng);
  return Tensor::from_f32(dims, v);
}

// ---------------------------------------------------------------------------

Outcome harmonic_table(const Context&) {
  struct Row {
    const char* name;
    const char* dataset;
    double h, s, u;
  };
  const Row rows[] = {
      {"SPNet", "VOC", 26.1, 78.0, 15.6},     {"SPNet", "COCO", 14.0, 35.2, 8.7},
      {"ZS3", "VOC", 28.7, 77.3, 17.7},       {"ZS3", "COCO", 15.0, 34.7, 9.5},
      {"CaGNet", "VOC", 39.7, 78.4, 26.6},    {"CaGNet", "COCO", 18.2, 33.5, 12.2},
      {"SIGN", "VOC", 41.7, 75.4, 28.9},      {"SIGN", "COCO", 20.9, 32.3, 15.5},
      {"Joint", "VOC", 45.9, 77.7, 32.5},
      {"ZegFormer", "VOC", 73.3, 86.4, 63.6}, {"ZegFormer", "COCO", 34.8, 36.6, 33.2},
      {"Zzseg", "VOC", 77.5, 83.5, 72.5},     {"Zzseg", "COCO", 37.8, 39.3, 36.3},
      {"DeOP", "VOC", 80.8, 88.2, 74.6},      {"DeOP", "COCO", 38.2, 38.0, 38.4},
      {"ZegCLIP", "VOC", 84.3, 91.9, 77.8},   {"ZegCLIP", "COCO", 40.8, 40.2, 41.4},
      {"OTSeg", "VOC", 84.5, 92.1, 78.1},     {"OTSeg", "COCO", 41.4, 41.4, 41.4},
      {"SM", "VOC", 85.3, 87.7, 83.1},        {"SM", "COCO", 42.5, 42.6, 42.4},
  };
  Failures f;
  std::size_t n = 0;
  for (const auto& r : rows) {
    const double got = hiou(r.s, r.u);
    ++n;
    if (!(std::abs(got - r.h) <= 0.05))
      f.add(std::string(r.name) + "/" + r.dataset + " " + fmt(got, 3) + " vs " + fmt(r.h, 1));
  }
  return f.outcome(std::to_string(n) + " printed pairs within 0.05");
}

Outcome hungarian_optimality(const Context&) {
  std::mt19937 rng(20240601);
  Failures f;
  for (int it = 0; it < 1000; ++it) {
    const std::size_t K = 1 + rng() % 7;
    const std::size_t T = 1 + rng() % K;
    const int kind = it % 3;  // 0: small ints (many ties), 1: wide ints, 2: continuous
    std::vector<float> c(K * T);
    for (auto& v : c) {
      if (kind == 0) v = float(rng() % 3);
      else if (kind == 1) v = float(rng() % 1000);
      else v = std::uniform_real_distribution<float>(-5.0f, 5.0f)(rng);
    }
    const auto a = hungarian(c, K, T);
    const auto b = oracle::brute_force(c, K, T);
    double want = 0.0;
    for (std::size_t t = 0; t < T; ++t) want += c[b.query_of[t] * T + t];
    if (a.total_cost() != want) {
      f.add("matrix " + std::to_string(it) + ": " + fmt(a.total_cost(), 9) + " vs " + fmt(want, 9));
      continue;
    }
    std::vector<std::size_t> q;
    for (const auto& p : a.pairs) q.push_back(p.query);
    if (kind != 2 && q != b.query_of) f.add("matrix " + std::to_string(it) + ": tie order");
    if (hungarian(c, K, T).pairs.size() != a.pairs.size()) f.add("rerun differs");
  }
  // crafted ties
  const std::vector<float> zeros(5 * 3, 0.0f);
  const auto z = hungarian(zeros, 5, 3);
  if (!(z.pairs[0].query == 0 && z.pairs[1].query == 1 && z.pairs[2].query == 2)) f.add("all-zero tie");
  const std::vector<float> two{1, 1, 1, 1, 0, 0};  // 3 x 2, optimum 1 reached by (0,2) and (2,0)
  const auto t = hungarian(two, 3, 2);
  if (!(t.pairs[0].query == 0 && t.pairs[1].query == 2)) f.add("3x2 tie");
  const std::vector<float> blocks{0, 0, 5, 0, 0, 5, 5, 5, 0};  // (0,1,2) and (1,0,2) both cost 0
  const auto bl = hungarian(blocks, 3, 3);
  if (!(bl.pairs[0].query == 0 && bl.pairs[1].query == 1 && bl.pairs[2].query == 2)) f.add("block tie");
  return f.outcome("1000 matrices exact, tie fixtures lexicographic");
}

Outcome split_exclusion(const Context&) {
  std::mt19937 rng(7);
  Failures f;
  const std::size_t C = 6, H = 3, W = 4;
  for (int it = 0; it < 200; ++it) {
    const std::size_t ns = 1 + rng() % 3, nu = 1 + rng() % 3;
    const std::size_t ks = 1 + rng() % 6, ku = 1 + rng() % 6;
    const std::size_t ts = rng() % (std::min<std::size_t>(ks, 5) + 1);
    const std::size_t tu = rng() % (std::min<std::size_t>(ku, 5) + 1);
    const auto E = build_joint_embedding(normalize_rows(randn(rng, {ns, C})), normalize_rows(randn(rng, {nu, C})));
    auto group = [&](std::size_t k) {
      GroupPredictions g;
      g.V = randn(rng, {k, C});
      g.M = randn(rng, {k, H, W}, 2.0f);
      return g;
    };
    const auto sp = group(ks), cp = group(ku);
    auto targets = [&](std::size_t t, std::size_t base, std::size_t n) {
      std::vector<std::size_t> ids(t);
      std::vector<std::uint8_t> m(t * H * W);
      for (auto& id : ids) id = base + rng() % n;
      for (auto& v : m) v = rng() % 2;
      return make_targets(ids, Tensor::from_u8({t, H, W}, m));
    };
    const auto st = targets(ts, 0, ns), ct = targets(tu, ns, nu);
    const CostWeights w;
    const auto r = split_match(sp, cp, st, ct, E, w);
    const auto& pairs = r.combined.pairs;

    const auto ctx = "fixture " + std::to_string(it);
    std::vector<int> hits(ts + tu, 0);
    std::vector<int> used(ks + ku, 0);
    for (const auto& p : pairs) {
      if ((p.query < ks) != (p.target < ts)) f.add(ctx + ": cross-group pair");
      if (p.target >= ts + tu || p.query >= ks + ku) {
        f.add(ctx + ": index out of range");
        continue;
      }
      ++hits[p.target];
      ++used[p.query];
    }
    for (int h : hits)
      if (h != 1) f.add(ctx + ": target not matched exactly once");
    for (int u : used)
      if (u > 1) f.add(ctx + ": query reused");

    // Joint exhaustive oracle over the block cost matrix, restricted to
    // group-respecting pairs.
    const std::size_t K = ks + ku, T = ts + tu;
    std::vector<float> cost(K * T, 0.0f);
    const auto cs = ts ? match_cost_matrix(class_similarity(sp.V, E), sp.M, st, Group::seen, ns, w) : CostMatrix{};
    const auto cu = tu ? match_cost_matrix(class_similarity(cp.V, E), cp.M, ct, Group::candidate, ns, w) : CostMatrix{};
    for (std::size_t k = 0; k < ks; ++k)
      for (std::size_t t = 0; t < ts; ++t) cost[k * T + t] = cs.at(k, t);
    for (std::size_t k = 0; k < ku; ++k)
      for (std::size_t t = 0; t < tu; ++t) cost[(ks + k) * T + ts + t] = cu.at(k, t);
    const auto b = oracle::brute_force(cost, K, T, [&](std::size_t k, std::size_t t) { return (k < ks) == (t < ts); });
    double want = 0.0;
    for (std::size_t t = 0; t < T; ++t) want += cost[b.query_of[t] * T + t];
    if (r.combined.total_cost() != want)
      f.add(ctx + ": total " + fmt(r.combined.total_cost(), 9) + " vs oracle " + fmt(want, 9));
  }
  return f.outcome("200 fixtures, no cross pairs, totals equal the oracle");
}

Outcome window_equivalence(const Context&) {
  std::mt19937 rng(99);
  Failures f;
  for (int it = 0; it < 100; ++it) {
    std::size_t h, w;
    int s;
    switch (it % 4) {
      case 0:  // H = s
        s = 1 + int(rng() % 12);
        h = std::size_t(s);
        w = std::size_t(s) + rng() % 10;
        break;
      case 1:  // odd window, stride does not divide the extent
        s = 3 + 2 * int(rng() % 5);
        h = std::size_t(s) + 1 + rng() % 20;
        w = std::size_t(s) + 1 + rng() % 20;
        break;
      default:
        h = 1 + rng() % 40;
        w = 1 + rng() % 40;
        s = 1 + int(rng() % std::min(h, w));
    }
    const std::size_t c = 1 + rng() % 4;
    const auto x = randn(rng, {c, h, w}, 3.0f);
    const auto got = window_seeds(x, s);
    const auto want = oracle::window_means(x, s);
    const auto ctx = std::to_string(h) + "x" + std::to_string(w) + " s=" + std::to_string(s);
    if (got.seeds.numel() != want.size()) {
      f.add(ctx + ": count " + std::to_string(got.seeds.numel() / c) + " vs " + std::to_string(want.size() / c));
      continue;
    }
    if (std::memcmp(got.seeds.f32().data(), want.data(), want.size() * sizeof(float)) != 0)
      f.add(ctx + ": values differ");
  }
  return f.outcome("100 (H,W,s) cases bitwise equal");
}

Outcome kmeans_monotone(const Context&) {
  std::mt19937 rng(5);
  Failures f;
  auto monotone = [](const ClusterResult& r) {
    for (std::size_t i = 1; i < r.objective_trace.size(); ++i)
      if (r.objective_trace[i] > r.objective_trace[i - 1]) return false;
    return true;
  };
  for (auto metric : {Metric::cosine, Metric::euclidean}) {
    const char* mname = metric == Metric::cosine ? "cosine" : "euclidean";
    for (int it = 0; it < 100; ++it) {
      const std::size_t h = 8 + rng() % 17, w = 8 + rng() % 17, c = 2 + rng() % 6;
      const auto x = randn(rng, {c, h, w});
      WindowConfig cfg;
      cfg.metric = metric;
      cfg.window_sizes = {4, 8};
      cfg.kmeans_iters = 5 + int(rng() % 20);
      const auto r = kmeans(x, multi_scale_seeds(x, cfg), cfg);
      if (!monotone(r)) f.add(std::string(mname) + " run " + std::to_string(it));
    }
    const auto x = randn(rng, {3, 10, 10});
    WindowConfig cfg;
    cfg.metric = metric;
    SeedSet one{Tensor::from_f32({1, 3}, {0.5f, -1.0f, 2.0f}), {{1, 0, 0}}};
    const auto r1 = kmeans(x, one, cfg);
    if (r1.num_clusters() != 1 || std::any_of(r1.assignments.begin(), r1.assignments.end(), [](int a) { return a != 0; }))
      f.add(std::string(mname) + " single seed");
    if (!monotone(r1)) f.add(std::string(mname) + " single seed trace");
    const auto s = window_seeds(x, 5);
    std::vector<float> dup;
    for (int rep = 0; rep < 3; ++rep) dup.insert(dup.end(), s.seeds.f32().begin(), s.seeds.f32().begin() + 3);
    dup.insert(dup.end(), s.seeds.f32().begin() + 3, s.seeds.f32().begin() + 6);
    SeedSet dups{Tensor::from_f32({4, 3}, dup), std::vector<SeedOrigin>(4)};
    const auto r2 = kmeans(x, dups, cfg);
    if (r2.num_clusters() > 2) f.add(std::string(mname) + " duplicate seeds kept " + std::to_string(r2.num_clusters()));
    if (!monotone(r2)) f.add(std::string(mname) + " duplicate seed trace");
    for (auto a : r2.assignments)
      if (a < 0 || std::size_t(a) >= r2.num_clusters()) {
        f.add(std::string(mname) + " duplicate seeds: ids not compact");
        break;
      }
  }
  return f.outcome("200 runs non-increasing, degenerate seeds handled");
}

Outcome loss_kernels(const Context&) {
  Failures f;
  auto close = [&](const std::string& what, double got, double want, double tol) {
    if (!(std::abs(got - want) <= tol)) f.add(what + " " + fmt(got, 7) + " vs " + fmt(want, 7));
  };
  const double ln2 = std::log(2.0);
  {
    const std::vector<float> m{1, 1, 0}, y{0, 1, 1};
    close("dice({p1,p2},{p2,p3})", dice_loss<float, float>(m, y, 1.0), 1.0 - 3.0 / 5.0, 1e-7);
    const std::vector<float> a{1, 0}, b{0, 1};
    close("dice disjoint", dice_loss<float, float>(a, b, 1.0), 1.0 - 1.0 / 3.0, 1e-7);
    close("dice equal", dice_loss<float, float>(m, m, 1.0), 0.0, 1e-7);
    close("iou disjoint", iou_loss<float, float>(a, b, 1.0), 1.0 - 1.0 / 3.0, 1e-7);
    close("iou equal", iou_loss<float, float>(m, m, 1.0), 0.0, 1e-7);
    const std::vector<float> z{0, 0};
    close("iou empty", iou_loss<float, float>(z, z, 1.0), 0.0, 0.0);
  }
  {
    const std::vector<float> x0(5, 0.0f);
    const std::vector<std::uint8_t> y0{1, 0, 0, 1, 1};
    close("bce zero logits", bce_mask<float, std::uint8_t>(x0, y0), ln2, 1e-7);
    const std::vector<float> x{2.0f, -2.0f};
    const std::vector<std::uint8_t> y{1, 0};
    close("bce (2,-2)", bce_mask<float, std::uint8_t>(x, y), std::log(1.0 + std::exp(-2.0)), 1e-7);
  }
  {
    const std::vector<float> p{0.5f};
    close("focal p=0.5 hit", focal_loss<float>(p, 0, 0.25, 2.0), 0.25 * 0.25 * ln2, 1e-7);
    const std::vector<float> perfect{1.0f, 0.0f, 0.0f};
    close("focal perfect", focal_loss<float>(perfect, 0, 0.25, 2.0), 0.0, 1e-6);
    std::mt19937 rng(3);
    std::uniform_real_distribution<double> u(0.001, 0.999);
    double worst = 0.0;
    for (int it = 0; it < 200; ++it) {
      std::vector<double> q(1 + rng() % 8);
      for (auto& v : q) v = u(rng);
      const long tgt = long(rng() % (q.size() + 1)) - 1;
      double bce = 0.0;
      for (std::size_t i = 0; i < q.size(); ++i) bce += long(i) == tgt ? -std::log(q[i]) : -std::log(1.0 - q[i]);
      const auto t = tgt < 0 ? std::optional<std::size_t>{} : std::optional<std::size_t>(std::size_t(tgt));
      worst = std::max(worst, std::abs(focal_loss<double>(q, t, 0.5, 0.0) - 0.5 * bce));
    }
    if (!(worst <= 1e-6)) f.add("focal gamma=0 deviates by " + fmt(worst, 9));
  }
  {
    const std::size_t N = 4, P = 6;
    const std::vector<float> flat(N * P, 1.25f);
    const std::vector<std::int32_t> lab{0, 1, 2, 3, 1, 2};
    close("ce uniform", cross_entropy_map<float>(flat, N, lab, -1), std::log(4.0), 1e-6);
    std::vector<float> hot(N * P, -30.0f);
    for (std::size_t p = 0; p < P; ++p) hot[std::size_t(lab[p]) * P + p] = 30.0f;
    close("ce one-hot", cross_entropy_map<float>(hot, N, lab, -1), 0.0, 1e-12);
    const std::vector<std::int32_t> ign(P, -1);
    close("ce ignored", cross_entropy_map<float>(flat, N, ign, -1), 0.0, 0.0);
  }
  return f.outcome("kernels match closed forms");
}

Outcome gradient_checks(const Context&) {
  Failures f;
  double worst = 0.0;
  std::string worst_op;
  std::size_t n = 0;
  for (const auto& op : gradcheck_ops()) {
    for (std::uint64_t seed = 0; seed < 25; ++seed) {
      const auto r = grad_check(op, seed, 1e-3);
      ++n;
      if (r.max_rel_error > worst) {
        worst = r.max_rel_error;
        worst_op = op;
      }
      if (!(r.max_rel_error < 1e-4)) f.add(op + " seed " + std::to_string(seed) + " rel " + fmt(r.max_rel_error, 8));
    }
  }
  char b[128];
  std::snprintf(b, sizeof b, "%zu checks over %zu ops, worst %.2e (%s)", n, gradcheck_ops().size(), worst,
                worst_op.c_str());
  return f.outcome(b);
}

double mask_iou(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b) {
  std::size_t i = 0, u = 0;
  for (std::size_t p = 0; p < a.size(); ++p) {
    i += a[p] && b[p];
    u += a[p] || b[p];
  }
  return u ? double(i) / double(u) : 0.0;
}

void write_config(const fs::path& dir) {
  std::ofstream f(dir / "run.ini");
  f << "[input]\n"
       "features = O.smtf\n"
       "seen_labels = Ys.smtf\n"
       "ignore = ignore.smtf\n"
       "seen_embeddings = As.smtf\n"
       "unseen_embeddings = Au.smtf\n"
       "gt = gt.smtf\n"
       "seen_ids = 0,1,2\n"
       "unseen_ids = 3,4\n"
       "[queries]\n"
       "seed = 0\n"
       "[mfe]\n"
       "seed = 0\n"
       "groups = 4\n"
       "[run]\n"
       "out_dir = out\n";
}

Outcome synthetic_recovery(const Context& ctx) {
  const auto dir = ctx.work / "c8";
  fs::remove_all(dir);
  fs::create_directories(dir);
  SynthSpec spec;  // 4 blobs, 2 labelled, 64 x 64
  const auto fx = gen_synth(spec);
  save_synth(fx, spec, dir);
  write_config(dir);
  const auto r = run_pipeline(load_pipeline_config(dir / "run.ini"));

  Failures f;
  const std::size_t P = spec.height * spec.width;
  std::size_t recovered = 0;
  std::string ious;
  for (std::size_t b = spec.seen; b < spec.blobs; ++b) {
    const auto blob = fx.blob_masks.u8().subspan(b * P, P);
    double best = 0.0;
    for (std::size_t u = 0; u < r.candidates.count; ++u)
      best = std::max(best, mask_iou(r.candidates.masks.u8().subspan(u * P, P), blob));
    ious += (ious.empty() ? "" : ",") + fmt(best, 3);
    if (best >= 0.9) ++recovered;
  }
  if (recovered < 2) f.add("only " + std::to_string(recovered) + " candidate masks with IoU >= 0.9 (" + ious + ")");
  if (r.match.candidate.pairs.size() != r.candidate_targets.size())
    f.add(std::to_string(r.match.candidate.pairs.size()) + " of " + std::to_string(r.candidate_targets.size()) +
          " candidate targets assigned");
  const double uiou = r.report.percent ? r.report.uiou / 100.0 : r.report.uiou;
  if (!(uiou >= 0.9)) f.add("uIoU " + fmt(uiou, 4));
  return f.outcome(std::to_string(r.candidates.count) + " candidates, blob IoU " + ious + ", uIoU " + fmt(uiou, 4));
}

std::map<std::string, std::string> smtf_files(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.path().extension() != ".smtf") continue;
    std::ifstream f(e.path(), std::ios::binary);
    out[e.path().filename().string()] = {std::istreambuf_iterator<char>(f), {}};
  }
  return out;
}

Outcome determinism(const Context& ctx) {
  if (ctx.cli.empty() || !fs::exists(ctx.cli)) return {false, "smseg binary not found (pass --cli)"};
  const auto dir = ctx.work / "c9";
  fs::remove_all(dir);
  fs::create_directories(dir);
  auto run = [&](const std::string& args) {
    const std::string cmd = "\"" + ctx.cli.string() + "\" " + args + " > \"" + (dir / "log.txt").string() + "\" 2>&1";
    return std::system(cmd.c_str());
  };
  if (run("gen-synth --seed 0 --out-dir \"" + dir.string() + "\"") != 0) return {false, "gen-synth failed"};
  write_config(dir);
  const auto cfg = (dir / "run.ini").string();
  const char* names[3] = {"t1a", "t1b", "t8"};
  const int threads[3] = {1, 1, 8};
  for (int i = 0; i < 3; ++i)
    if (run("pipeline --config \"" + cfg + "\" --out-dir \"" + (dir / names[i]).string() + "\" --threads " +
            std::to_string(threads[i])) != 0)
      return {false, std::string("pipeline run ") + names[i] + " failed"};
  const auto a = smtf_files(dir / "t1a"), b = smtf_files(dir / "t1b"), c = smtf_files(dir / "t8");
  Failures f;
  if (a.empty()) f.add("no SMTF intermediates written");
  auto compare = [&](const std::map<std::string, std::string>& x, const char* label) {
    if (x.size() != a.size()) f.add(std::string(label) + ": file set differs");
    for (const auto& [name, bytes] : a) {
      auto it = x.find(name);
      if (it == x.end() || it->second != bytes) f.add(std::string(label) + ": " + name + " differs");
    }
  };
  compare(b, "rerun");
  compare(c, "8 threads");
  return f.outcome(std::to_string(a.size()) + " SMTF files identical across 2 runs and 1/8 threads");
}

Outcome random_query_contract(const Context&) {
  Failures f;
  const std::uint32_t want[8] = {0xbc024ec5u, 0xbbcb6bb8u, 0x3ce33878u, 0x3bd7c0cfu,
                                 0xbb86dd36u, 0x3cf5366bu, 0xbcc2abb6u, 0x3c40ef6au};
  const auto empty = make_query_set(Tensor::zeros(DType::f32, {0, 8}), Tensor::zeros(DType::f32, {0, 8}));
  const auto rq = inject_random_queries(empty, 1, 0, 0.02f);
  for (std::size_t i = 0; i < 8; ++i) {
    std::uint32_t bits;
    std::memcpy(&bits, &rq.random.f32()[i], 4);
    if (bits != want[i]) {
      char b[64];
      std::snprintf(b, sizeof b, "value %zu bits %08x vs %08x", i, bits, want[i]);
      f.add(b);
    }
  }

  std::mt19937 rng(12);
  const std::size_t C = 8;
  const auto F = randn(rng, {C, 5, 6});
  const auto q = make_query_set(randn(rng, {3, C}), randn(rng, {2, C}));
  const auto same = inject_random_queries(q, 0, 0);
  if (!(same.stacked() == q.stacked()) || same.kr() != 0) f.add("K_r = 0 changed the query set");
  const auto dec = DecoderParams::identity(C, 2);
  const auto base = decode(q, F, dec);
  const auto base0 = decode(same, F, dec);
  if (!(base0.V == base.V) || !(base0.M == base.M)) f.add("K_r = 0 changed predictions");
  for (std::size_t kr : {1u, 7u, 50u}) {
    const auto more = decode(inject_random_queries(q, kr, 3), F, dec);
    const std::size_t P = 30;
    if (std::memcmp(more.V.f32().data(), base.V.f32().data(), base.V.numel() * 4) != 0)
      f.add("K_r = " + std::to_string(kr) + " perturbed V");
    if (std::memcmp(more.M.f32().data(), base.M.f32().data(), q.size() * P * 4) != 0)
      f.add("K_r = " + std::to_string(kr) + " perturbed M");
  }
  return f.outcome("first-8 values bitwise, K_r = 0 no-op, prefix rows unchanged");
}

struct Criterion {
  int id;
  const char* name;
  double limit_s;
  std::function<Outcome(const Context&)> run;
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance suite"};
  int only = 0;
  std::string cli, work = (fs::temp_directory_path() / "smseg_acceptance").string();
  app.add_option("--criterion", only, "run a single criterion (1-10)");
  app.add_option("--cli", cli, "path to the smseg binary");
  app.add_option("--work-dir", work, "scratch directory");
  CLI11_PARSE(app, argc, argv);

  const std::vector<Criterion> all = {
      {1, "hIoU arithmetic", 1, harmonic_table},
      {2, "Hungarian optimality", 10, hungarian_optimality},
      {3, "split exclusion", 30, split_exclusion},
      {4, "window seed equivalence", 10, window_equivalence},
      {5, "k-means monotonicity", 30, kmeans_monotone},
      {6, "loss kernels", 5, loss_kernels},
      {7, "gradient checks", 60, gradient_checks},
      {8, "synthetic recovery", 60, synthetic_recovery},
      {9, "determinism", 120, determinism},
      {10, "random query contract", 5, random_query_contract},
  };

  Context ctx{cli, work};
  fs::create_directories(ctx.work);
  bool all_pass = true;
  bool ran = false;
  for (const auto& c : all) {
    if (only && c.id != only) continue;
    ran = true;
    set_num_threads(1);
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run(ctx);
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double dt = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (dt >= c.limit_s) {
      o.pass = false;
      o.detail += "; over the " + fmt(c.limit_s, 0) + " s limit";
    }
    std::printf("criterion %2d %-24s %s  %.3fs  %s\n", c.id, c.name, o.pass ? "PASS" : "FAIL", dt, o.detail.c_str());
    std::fflush(stdout);
    all_pass = all_pass && o.pass;
  }
  if (!ran) {
    std::fprintf(stderr, "no criterion %d\n", only);
    return 2;
  }
  return all_pass ? 0 : 1;
}
