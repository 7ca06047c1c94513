#include "smseg/pipeline.hpp"

#include <algorithm>
#include <functional>
#include <map>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "smseg/embeddings.hpp"
#include "smseg/json_io.hpp"
#include "smseg/mfe.hpp"
#include "smseg/parallel.hpp"

namespace smseg {

namespace {

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item.erase(0, item.find_first_not_of(" \t"));
    item.erase(item.find_last_not_of(" \t") + 1);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

template <class T>
T parse_number(const std::string& key, const std::string& v) {
  std::istringstream in(v);
  T out{};
  in >> out;
  if (!in || !(in >> std::ws).eof())
    throw Error(ErrorCode::config, "bad value '" + v + "' for " + key);
  return out;
}

std::vector<int> parse_ids(const std::string& key, const std::string& v) {
  std::vector<int> out;
  for (const auto& s : split_list(v)) out.push_back(parse_number<int>(key, s));
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw Error(ErrorCode::config, "bad boolean '" + v + "' for " + key);
}

using Setter = std::function<void(PipelineConfig&, const std::string&)>;

const std::map<std::string, Setter>& setters() {
  namespace fs = std::filesystem;
  static const std::map<std::string, Setter> table = {
      {"input.features", [](PipelineConfig& c, const std::string& v) { c.features = v; }},
      {"input.seen_labels", [](PipelineConfig& c, const std::string& v) { c.seen_labels = v; }},
      {"input.ignore", [](PipelineConfig& c, const std::string& v) { c.ignore = v; }},
      {"input.seen_embeddings", [](PipelineConfig& c, const std::string& v) { c.seen_embeddings = v; }},
      {"input.unseen_embeddings", [](PipelineConfig& c, const std::string& v) { c.unseen_embeddings = v; }},
      {"input.candidate_embeddings",
       [](PipelineConfig& c, const std::string& v) { c.candidate_embeddings = v; }},
      {"input.gt", [](PipelineConfig& c, const std::string& v) { c.gt = v; }},
      {"input.seen_ids", [](PipelineConfig& c, const std::string& v) { c.seen_ids = parse_ids("seen_ids", v); }},
      {"input.unseen_ids",
       [](PipelineConfig& c, const std::string& v) { c.unseen_ids = parse_ids("unseen_ids", v); }},
      {"input.num_classes",
       [](PipelineConfig& c, const std::string& v) { c.num_classes = parse_number<std::size_t>("num_classes", v); }},
      {"input.ignore_id", [](PipelineConfig& c, const std::string& v) { c.ignore_id = parse_number<int>("ignore_id", v); }},
      {"cluster.windows",
       [](PipelineConfig& c, const std::string& v) { c.windows.window_sizes = parse_ids("windows", v); }},
      {"cluster.iters",
       [](PipelineConfig& c, const std::string& v) { c.windows.kmeans_iters = parse_number<int>("iters", v); }},
      {"cluster.tol",
       [](PipelineConfig& c, const std::string& v) { c.windows.kmeans_tol = parse_number<float>("tol", v); }},
      {"cluster.metric",
       [](PipelineConfig& c, const std::string& v) {
         if (v == "cosine") c.windows.metric = Metric::cosine;
         else if (v == "euclidean") c.windows.metric = Metric::euclidean;
         else throw Error(ErrorCode::config, "unknown metric '" + v + "'");
       }},
      {"cluster.tau", [](PipelineConfig& c, const std::string& v) { c.tau = parse_number<float>("tau", v); }},
      {"cluster.min_area",
       [](PipelineConfig& c, const std::string& v) { c.min_area = parse_number<std::size_t>("min_area", v); }},
      {"queries.seen",
       [](PipelineConfig& c, const std::string& v) { c.seen_queries = parse_number<std::size_t>("seen", v); }},
      {"queries.candidate",
       [](PipelineConfig& c, const std::string& v) { c.candidate_queries = parse_number<std::size_t>("candidate", v); }},
      {"queries.random",
       [](PipelineConfig& c, const std::string& v) { c.random_queries = parse_number<std::size_t>("random", v); }},
      {"queries.seed", [](PipelineConfig& c, const std::string& v) { c.seed = parse_number<std::uint64_t>("seed", v); }},
      {"queries.sigma", [](PipelineConfig& c, const std::string& v) { c.sigma = parse_number<float>("sigma", v); }},
      {"queries.oracle_scale",
       [](PipelineConfig& c, const std::string& v) { c.oracle_scale = parse_number<float>("oracle_scale", v); }},
      {"decoder.layers",
       [](PipelineConfig& c, const std::string& v) { c.decoder_layers = parse_number<std::size_t>("layers", v); }},
      {"loss.w_cls", [](PipelineConfig& c, const std::string& v) { c.weights.w_cls = parse_number<float>("w_cls", v); }},
      {"loss.w_bce", [](PipelineConfig& c, const std::string& v) { c.weights.w_bce = parse_number<float>("w_bce", v); }},
      {"loss.w_dice", [](PipelineConfig& c, const std::string& v) { c.weights.w_dice = parse_number<float>("w_dice", v); }},
      {"loss.w_iou", [](PipelineConfig& c, const std::string& v) { c.weights.w_iou = parse_number<float>("w_iou", v); }},
      {"loss.focal_alpha",
       [](PipelineConfig& c, const std::string& v) { c.weights.focal_alpha = parse_number<float>("focal_alpha", v); }},
      {"loss.focal_gamma",
       [](PipelineConfig& c, const std::string& v) { c.weights.focal_gamma = parse_number<float>("focal_gamma", v); }},
      {"loss.eps", [](PipelineConfig& c, const std::string& v) { c.weights.eps = parse_number<float>("eps", v); }},
      {"loss.use_iou_in_loss",
       [](PipelineConfig& c, const std::string& v) { c.weights.use_iou_in_loss = parse_bool("use_iou_in_loss", v); }},
      {"mfe.seed", [](PipelineConfig& c, const std::string& v) { c.mfe_seed = parse_number<std::uint64_t>("seed", v); }},
      {"mfe.sigma", [](PipelineConfig& c, const std::string& v) { c.mfe_sigma = parse_number<double>("sigma", v); }},
      {"mfe.groups", [](PipelineConfig& c, const std::string& v) { c.mfe_groups = parse_number<std::size_t>("groups", v); }},
      {"mfe.temperature",
       [](PipelineConfig& c, const std::string& v) { c.temperature = parse_number<double>("temperature", v); }},
      {"mfe.ratio", [](PipelineConfig& c, const std::string& v) { c.ratio = parse_number<std::size_t>("ratio", v); }},
      {"run.threads", [](PipelineConfig& c, const std::string& v) { c.threads = parse_number<int>("threads", v); }},
      {"run.out_dir", [](PipelineConfig& c, const std::string& v) { c.out_dir = fs::path(v); }},
  };
  return table;
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::filesystem::path& p) {
  if (p.empty() || p.is_absolute()) return p;
  return base / p;
}

template <class F>
auto stage(const char* name, F&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const Error& e) {
    throw Error(e.code(), std::string("stage '") + name + "': " + e.detail());
  } catch (const std::exception& e) {
    throw Error(ErrorCode::io, std::string("stage '") + name + "': " + e.what());
  }
}

Tensor oracle_block(const Tensor& rows, std::size_t k, std::size_t width, float scale) {
  std::vector<float> data(k * width, 0.0f);
  const std::size_t n = rows.rank() == 2 ? std::min(k, rows.dim(0)) : 0;
  auto src = rows.f32();
  for (std::size_t i = 0; i < n * width; ++i) data[i] = scale * src[i];
  return Tensor::from_f32({k, width}, std::move(data));
}

Tensor rows_slice(const Tensor& t, std::size_t begin, std::size_t count) {
  const std::size_t w = t.dim(1);
  auto s = t.f32().subspan(begin * w, count * w);
  return Tensor::from_f32({count, w}, {s.begin(), s.end()});
}

class ThreadScope {
 public:
  explicit ThreadScope(int n) : prev_(num_threads()) { set_num_threads(n); }
  ~ThreadScope() { set_num_threads(prev_); }
  ThreadScope(const ThreadScope&) = delete;
  ThreadScope& operator=(const ThreadScope&) = delete;

 private:
  int prev_;
};

}  // namespace

PipelineConfig load_pipeline_config(const std::filesystem::path& path) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  try {
    pt::read_ini(path.string(), tree);
  } catch (const pt::ini_parser_error& e) {
    throw Error(ErrorCode::config, e.what());
  }
  PipelineConfig cfg;
  const auto& table = setters();
  for (const auto& [section, body] : tree) {
    if (body.empty() && !body.data().empty())
      throw Error(ErrorCode::config, "key '" + section + "' outside any section");
    for (const auto& [key, value] : body) {
      const auto it = table.find(section + "." + key);
      if (it == table.end())
        throw Error(ErrorCode::config, "unknown key [" + section + "] " + key);
      it->second(cfg, value.data());
    }
  }
  const auto base = path.parent_path();
  for (auto* p : {&cfg.features, &cfg.seen_labels, &cfg.ignore, &cfg.seen_embeddings,
                  &cfg.unseen_embeddings, &cfg.candidate_embeddings, &cfg.gt, &cfg.out_dir})
    *p = resolve(base, *p);
  for (const auto* p : {&cfg.features, &cfg.seen_labels, &cfg.ignore, &cfg.seen_embeddings, &cfg.gt})
    if (p->empty()) throw Error(ErrorCode::config, "missing required [input] path");
  if (cfg.seen_ids.empty()) throw Error(ErrorCode::config, "[input] seen_ids is required");
  if (cfg.threads < 1) throw Error(ErrorCode::config, "threads must be >= 1");
  cfg.windows.validate();
  cfg.weights.validate();
  return cfg;
}

PipelineResult run_pipeline(const PipelineConfig& cfg) {
  ThreadScope threads(cfg.threads);
  const auto& out = cfg.out_dir;
  PipelineResult res;

  struct Inputs {
    Tensor O, ys, ignore, as, au, gt;
  };
  const Inputs in = stage("load", [&] {
    std::filesystem::create_directories(out);
    Inputs x;
    x.O = load_tensor(cfg.features);
    x.ys = load_tensor(cfg.seen_labels);
    x.ignore = load_tensor(cfg.ignore);
    x.as = load_tensor(cfg.seen_embeddings);
    if (!cfg.unseen_embeddings.empty()) x.au = load_tensor(cfg.unseen_embeddings);
    x.gt = load_tensor(cfg.gt);
    if (x.O.rank() != 3) throw Error(ErrorCode::shape_mismatch, "features must be C x H x W");
    const Dims hw{x.O.dim(1), x.O.dim(2)};
    for (const Tensor* t : {&x.ys, &x.ignore, &x.gt})
      if (t->dims() != hw) throw Error(ErrorCode::shape_mismatch, "label maps must be H x W");
    if (x.ys.dtype() != DType::u8) throw Error(ErrorCode::bad_dtype, "seen labels must be u8");
    if (x.as.rank() != 2 || x.as.dim(0) != cfg.seen_ids.size())
      throw Error(ErrorCode::shape_mismatch, "A_s must have one row per seen id");
    if (!cfg.unseen_embeddings.empty() && (x.au.rank() != 2 || x.au.dim(0) != cfg.unseen_ids.size()))
      throw Error(ErrorCode::shape_mismatch, "A_u must have one row per unseen id");
    return x;
  });
  const std::size_t C = in.O.dim(0), H = in.O.dim(1), W = in.O.dim(2), P = H * W;
  const std::size_t ns = cfg.seen_ids.size();

  stage("cluster", [&] {
    const auto seeds = multi_scale_seeds(in.O, cfg.windows);
    res.clusters = kmeans(in.O, seeds, cfg.windows);
    save_tensor(seeds.seeds, out / "seeds.smtf");
    save_tensor(assignments_tensor(res.clusters), out / "assign.smtf");
    save_tensor(res.clusters.centroids, out / "centroids.smtf");
  });
  stage("fuse", [&] {
    res.fused = fuse_masks(res.clusters, cfg.tau);
    save_tensor(res.fused.masks, out / "fused_masks.smtf");
    save_tensor(res.fused.centroids, out / "fused_centroids.smtf");
  });
  stage("restrict", [&] {
    res.candidates = restrict_candidates(res.fused, in.ignore, cfg.min_area);
    save_tensor(res.candidates.masks, out / "Yu.smtf");
    save_tensor(res.candidates.centroids, out / "Cu_raw.smtf");
  });
  stage("embed", [&] {
    Tensor cu = cfg.candidate_embeddings.empty()
                    ? pool_region_embeddings(in.O, res.candidates)
                    : load_candidate_embeddings(cfg.candidate_embeddings, res.candidates.count,
                                                in.as.dim(1));
    save_tensor(cu, out / "Cu.smtf");
    res.E = build_joint_embedding(in.as, cu);
    save_tensor(res.E.matrix, out / "E.smtf");
  });

  stage("targets", [&] {
    std::vector<std::size_t> ids;
    std::vector<std::uint8_t> masks;
    auto ys = in.ys.u8();
    for (std::size_t j = 0; j < ns; ++j) {
      std::vector<std::uint8_t> m(P);
      std::size_t area = 0;
      for (std::size_t p = 0; p < P; ++p) {
        m[p] = ys[p] == cfg.seen_ids[j];
        area += m[p];
      }
      if (area == 0) continue;
      ids.push_back(j);
      masks.insert(masks.end(), m.begin(), m.end());
    }
    res.seen_targets = make_targets(ids, Tensor::from_u8({ids.size(), H, W}, std::move(masks)));
    std::vector<std::size_t> cids;
    for (std::size_t u = 0; u < res.candidates.count; ++u) cids.push_back(ns + u);
    res.candidate_targets = make_targets(cids, res.candidates.masks);
    save_targets(out / "seen_targets.json", res.seen_targets, "seen_target_masks.smtf");
    save_targets(out / "cand_targets.json", res.candidate_targets, "cand_target_masks.smtf");
  });

  const DecoderParams dparams = DecoderParams::identity(C, cfg.decoder_layers);
  const QuerySet queries = stage("queries", [&] {
    if (in.as.dim(1) != C)
      throw Error(ErrorCode::shape_mismatch, "embedding width must equal feature channels");
    const Tensor cu = rows_slice(res.E.matrix, ns, res.E.candidate_count);
    QuerySet q = make_query_set(oracle_block(in.as, cfg.seen_queries, C, cfg.oracle_scale),
                                oracle_block(cu, cfg.candidate_queries, C, cfg.oracle_scale));
    save_tensor(q.stacked(), out / "queries.smtf");
    save_tensor(decoder_params_tensor(dparams), out / "decoder.smtf");
    return q;
  });

  const Predictions preds = stage("decode", [&] {
    auto p = decode(queries, in.O, dparams);
    save_tensor(p.V, out / "V.smtf");
    save_tensor(p.M, out / "M.smtf");
    return p;
  });

  stage("split_match", [&] {
    res.match = split_match(preds.seen(), preds.candidate(), res.seen_targets,
                            res.candidate_targets, res.E, cfg.weights);
    write_json(out / "assign.json", to_json(res.match.combined));
  });

  stage("losses", [&] {
    const auto tr = preds.trained();
    const Tensor S = class_similarity(tr.V, res.E);
    res.matched = matched_loss(res.match.combined, S, tr.M, res.match.targets, cfg.weights);
    res.cosine = cosine_loss(tr.V, res.E, res.match.targets, res.match.combined);

    const auto pyr = pyramid_from_finest(in.O, cfg.ratio);
    const auto params = random_mfe_params(C, cfg.mfe_seed, cfg.mfe_sigma, cfg.mfe_groups);
    const Tensor fd = mfe_forward(pyr, params);
    save_tensor(mfe_params_tensor(params), out / "mfe_params.smtf");
    save_tensor(fd, out / "Fd.smtf");
    const Tensor logits = mfe_logits(fd, res.E, cfg.temperature);
    std::vector<std::int32_t> yp(P, -1);
    auto ys = in.ys.u8();
    for (std::size_t p = 0; p < P; ++p)
      for (std::size_t j = 0; j < ns; ++j)
        if (ys[p] == cfg.seen_ids[j]) yp[p] = static_cast<std::int32_t>(j);
    auto cm = res.candidates.masks.u8();
    for (std::size_t u = 0; u < res.candidates.count; ++u)
      for (std::size_t p = 0; p < P; ++p)
        if (cm[u * P + p]) yp[p] = static_cast<std::int32_t>(ns + u);
    std::vector<float> ypf(yp.begin(), yp.end());
    save_tensor(Tensor::from_f32({H, W}, std::move(ypf)), out / "Yp.smtf");
    res.mfe_ce = cross_entropy_map<float>(logits.f32(), res.E.rows(), yp, -1);
    res.mfe_focal = focal_map<float>(logits.f32(), res.E.rows(), yp, -1, cfg.weights.focal_alpha,
                                     cfg.weights.focal_gamma);
    Json j;
    j["matched"] = to_json(res.matched);
    j["cosine"] = res.cosine;
    j["sm"] = sm_loss(res.matched.total(), res.cosine);
    j["mfe_ce"] = res.mfe_ce;
    j["mfe_focal"] = res.mfe_focal;
    j["mfe"] = mfe_loss(res.mfe_ce, res.mfe_focal);
    j["total"] = total_loss(j["sm"].get<double>(), j["mfe"].get<double>());
    j["weights"] = to_json(cfg.weights);
    write_json(out / "loss.json", j);
  });

  stage("infer", [&] {
    const Tensor au = in.au.rank() == 2 ? in.au : Tensor::zeros(DType::f32, {0, C});
    const JointEmbedding full = build_joint_embedding(in.as, au);
    save_tensor(full.matrix, out / "E_full.smtf");
    const QuerySet q = inject_random_queries(queries, cfg.random_queries, cfg.seed, cfg.sigma);
    save_tensor(q.stacked(), out / "queries_inference.smtf");
    const Predictions p = decode(q, in.O, dparams);
    const Tensor S = class_similarity(p.V, full);
    save_tensor(S, out / "S.smtf");
    const std::vector<int> unseen = in.au.rank() == 2 ? cfg.unseen_ids : std::vector<int>{};
    res.labels = assemble_semantic_map(S, p.M, cfg.seen_ids, unseen);
    save_tensor(res.labels, out / "labels.smtf");
  });

  stage("eval", [&] {
    EvalConfig ec;
    ec.seen_ids = cfg.seen_ids;
    ec.unseen_ids = cfg.unseen_ids;
    ec.ignore_id = cfg.ignore_id;
    ec.num_classes = cfg.num_classes;
    if (ec.num_classes == 0) {
      int mx = -1;
      for (int id : ec.seen_ids) mx = std::max(mx, id);
      for (int id : ec.unseen_ids) mx = std::max(mx, id);
      ec.num_classes = static_cast<std::size_t>(mx + 1);
    }
    res.eval = ec;
    res.report = evaluate(res.labels, in.gt, ec);
    write_json(out / "report.json", to_json(res.report, ec));
  });
  return res;
}

}  // namespace smseg
