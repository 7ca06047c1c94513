#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <sstream>

#include "smseg/clustering.hpp"
#include "smseg/decoder.hpp"
#include "smseg/embeddings.hpp"
#include "smseg/gradcheck.hpp"
#include "smseg/json_io.hpp"
#include "smseg/losses.hpp"
#include "smseg/matcher.hpp"
#include "smseg/metrics.hpp"
#include "smseg/mfe.hpp"
#include "smseg/parallel.hpp"
#include "smseg/pipeline.hpp"
#include "smseg/synth.hpp"

using namespace smseg;

namespace {

std::vector<int> parse_ids(const std::string& s) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(std::stoi(item));
  return out;
}

Metric parse_metric(const std::string& s) {
  if (s == "cosine") return Metric::cosine;
  if (s == "euclidean") return Metric::euclidean;
  throw Error(ErrorCode::invalid_argument, "unknown metric '" + s + "'");
}

Tensor slice_rows(const Tensor& t, std::size_t begin, std::size_t count) {
  Dims d = t.dims();
  const std::size_t row = t.numel() / d[0];
  d[0] = count;
  auto s = t.f32().subspan(begin * row, count * row);
  return Tensor::from_f32(d, {s.begin(), s.end()});
}

void emit(const Json& j, const std::string& path) {
  if (path.empty() || path == "-")
    std::cout << j.dump(2) << '\n';
  else
    write_json(path, j);
}

CostWeights load_weights(const std::string& path) {
  return path.empty() ? CostWeights{} : weights_from_json(read_json(path));
}

JointEmbedding load_joint(const std::string& path, std::size_t num_seen) {
  const Tensor e = load_tensor(path);
  if (e.rank() != 2 || num_seen > e.dim(0))
    throw Error(ErrorCode::shape_mismatch, "--num-seen exceeds the embedding rows");
  return build_joint_embedding(slice_rows(e, 0, num_seen),
                               slice_rows(e, num_seen, e.dim(0) - num_seen));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"smseg: split-matching zero-shot segmentation toolkit"};
  app.require_subcommand(1);
  int threads = 1;
  app.add_option("--threads", threads, "worker threads")->check(CLI::PositiveNumber);

  // cluster
  auto* cl = app.add_subcommand("cluster", "multi-scale window seeds + k-means");
  std::string cl_features, cl_assign, cl_cent, cl_windows = "8,16,32", cl_metric = "cosine";
  int cl_iters = 10;
  float cl_tol = 1e-4f;
  cl->add_option("--features", cl_features)->required();
  cl->add_option("--windows", cl_windows);
  cl->add_option("--iters", cl_iters);
  cl->add_option("--tol", cl_tol);
  cl->add_option("--metric", cl_metric);
  cl->add_option("--out-assign", cl_assign)->required();
  cl->add_option("--out-centroids", cl_cent)->required();

  // fuse
  auto* fu = app.add_subcommand("fuse", "merge similar clusters into candidate masks");
  std::string fu_assign, fu_cent, fu_ignore, fu_masks, fu_out_cent;
  float fu_tau = 0.9f;
  std::size_t fu_min_area = 16;
  fu->add_option("--assign", fu_assign)->required();
  fu->add_option("--centroids", fu_cent)->required();
  fu->add_option("--tau", fu_tau);
  fu->add_option("--ignore", fu_ignore);
  fu->add_option("--min-area", fu_min_area);
  fu->add_option("--out-masks", fu_masks)->required();
  fu->add_option("--out-centroids", fu_out_cent);

  // embed
  auto* em = app.add_subcommand("embed", "region embeddings for candidate masks");
  std::string em_features, em_masks, em_external, em_out;
  em->add_option("--features", em_features)->required();
  em->add_option("--masks", em_masks)->required();
  em->add_option("--external", em_external);
  em->add_option("--out", em_out)->required();

  // loss
  auto* lo = app.add_subcommand("loss", "matched, cosine and split-matching losses");
  std::string lo_v, lo_m, lo_e, lo_assign, lo_weights, lo_out;
  std::vector<std::string> lo_targets;
  std::size_t lo_num_seen = 0;
  lo->add_option("--pred-class", lo_v)->required();
  lo->add_option("--pred-masks", lo_m)->required();
  lo->add_option("--embeds", lo_e)->required();
  lo->add_option("--num-seen", lo_num_seen, "rows of E that are seen classes")->required();
  lo->add_option("--targets", lo_targets, "target files, concatenated in order (seen, then candidate)")
      ->required();
  lo->add_option("--assignment", lo_assign)->required();
  lo->add_option("--weights", lo_weights);
  lo->add_option("--out", lo_out);

  // match
  auto* ma = app.add_subcommand("match", "split Hungarian matching");
  std::string ma_v, ma_m, ma_e, ma_st, ma_ct, ma_ksplit, ma_weights, ma_out;
  std::size_t ma_num_seen = 0;
  ma->add_option("--pred-class", ma_v)->required();
  ma->add_option("--pred-masks", ma_m)->required();
  ma->add_option("--embeds", ma_e)->required();
  ma->add_option("--num-seen", ma_num_seen, "rows of E that are seen classes")->required();
  ma->add_option("--seen-targets", ma_st)->required();
  ma->add_option("--cand-targets", ma_ct)->required();
  ma->add_option("--ksplit", ma_ksplit, "K_s,K_u")->required();
  ma->add_option("--weights", ma_weights);
  ma->add_option("--out", ma_out);

  // mfe
  auto* mf = app.add_subcommand("mfe", "multi-scale feature enhancement forward pass");
  std::string mf_f0, mf_f1, mf_f2, mf_params, mf_out;
  std::size_t mf_groups = 8;
  double mf_eps = 1e-5;
  mf->add_option("--f0", mf_f0)->required();
  mf->add_option("--f1", mf_f1)->required();
  mf->add_option("--f2", mf_f2)->required();
  mf->add_option("--params", mf_params)->required();
  mf->add_option("--groups", mf_groups);
  mf->add_option("--eps", mf_eps);
  mf->add_option("--out", mf_out)->required();

  // gradcheck
  auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient check");
  std::string gc_op = "mfe", gc_stencil = "five";
  std::uint64_t gc_seed = 0;
  double gc_step = 1e-3;
  gc->add_option("--op", gc_op, "op id or 'all'");
  gc->add_option("--seed", gc_seed);
  gc->add_option("--step", gc_step);
  gc->add_option("--stencil", gc_stencil)->check(CLI::IsMember({"two", "five"}));

  // infer
  auto* in = app.add_subcommand("infer", "decode with random queries and assemble labels");
  std::string in_features, in_queries, in_decoder, in_embeds, in_seen, in_unseen, in_out;
  std::size_t in_kr = 50;
  std::uint64_t in_seed = 0;
  float in_sigma = 0.02f;
  in->add_option("--features", in_features)->required();
  in->add_option("--queries", in_queries)->required();
  in->add_option("--decoder", in_decoder)->required();
  in->add_option("--embeds", in_embeds, "A = cat(A_s, A_u)")->required();
  in->add_option("--seen-ids", in_seen, "class ids of the leading rows of --embeds");
  in->add_option("--unseen-ids", in_unseen, "class ids of the remaining rows");
  in->add_option("--random-queries", in_kr);
  in->add_option("--seed", in_seed);
  in->add_option("--sigma", in_sigma);
  in->add_option("--out", in_out)->required();

  // eval
  auto* ev = app.add_subcommand("eval", "sIoU / uIoU / hIoU");
  std::string ev_pred, ev_gt, ev_seen, ev_unseen, ev_out;
  std::size_t ev_classes = 0;
  int ev_ignore = 255;
  bool ev_fraction = false;
  ev->add_option("--pred", ev_pred)->required();
  ev->add_option("--gt", ev_gt)->required();
  ev->add_option("--classes", ev_classes)->required();
  ev->add_option("--seen", ev_seen)->required();
  ev->add_option("--unseen", ev_unseen);
  ev->add_option("--ignore", ev_ignore);
  ev->add_flag("--fraction", ev_fraction, "report IoU in [0,1] instead of percent");
  ev->add_option("--out", ev_out);

  // gen-synth
  auto* gs = app.add_subcommand("gen-synth", "synthetic blob fixture");
  SynthSpec spec;
  std::size_t gs_size = 64;
  std::string gs_dir;
  gs->add_option("--seed", spec.seed);
  gs->add_option("--blobs", spec.blobs);
  gs->add_option("--seen", spec.seen, "labelled blobs");
  gs->add_option("--size", gs_size);
  gs->add_option("--dim", spec.dim);
  gs->add_option("--noise", spec.noise);
  gs->add_option("--out-dir", gs_dir)->required();

  // pipeline
  auto* pl = app.add_subcommand("pipeline", "end-to-end run from a config file");
  std::string pl_config, pl_out;
  int pl_threads = 0;
  pl->add_option("--config", pl_config)->required();
  pl->add_option("--out-dir", pl_out, "overrides [run] out_dir");
  pl->add_option("--threads", pl_threads, "overrides [run] threads");

  CLI11_PARSE(app, argc, argv);

  try {
    set_num_threads(threads);

    if (*cl) {
      WindowConfig cfg;
      cfg.window_sizes = parse_ids(cl_windows);
      cfg.kmeans_iters = cl_iters;
      cfg.kmeans_tol = cl_tol;
      cfg.metric = parse_metric(cl_metric);
      cfg.validate();
      const Tensor o = load_tensor(cl_features);
      const auto r = kmeans(o, multi_scale_seeds(o, cfg), cfg);
      save_tensor(assignments_tensor(r), cl_assign);
      save_tensor(r.centroids, cl_cent);
      Json j;
      j["clusters"] = r.num_clusters();
      j["objective_trace"] = r.objective_trace;
      std::cout << j.dump() << '\n';
    } else if (*fu) {
      const auto r = cluster_result_from_tensors(load_tensor(fu_assign), load_tensor(fu_cent));
      const auto fused = fuse_masks(r, fu_tau);
      Tensor masks = fused.masks, cents = fused.centroids;
      if (!fu_ignore.empty()) {
        const auto cand = restrict_candidates(fused, load_tensor(fu_ignore), fu_min_area);
        masks = cand.masks;
        cents = cand.centroids;
      }
      save_tensor(masks, fu_masks);
      if (!fu_out_cent.empty()) save_tensor(cents, fu_out_cent);
      std::cout << Json{{"masks", masks.dim(0)}}.dump() << '\n';
    } else if (*em) {
      const Tensor o = load_tensor(em_features);
      CandidateMaskSet cand;
      cand.masks = load_tensor(em_masks);
      if (cand.masks.rank() != 3) throw Error(ErrorCode::shape_mismatch, "masks must be U x H x W");
      cand.count = cand.masks.dim(0);
      const Tensor cu = em_external.empty()
                            ? pool_region_embeddings(o, cand)
                            : load_candidate_embeddings(em_external, cand.count, 0);
      save_tensor(cu, em_out);
    } else if (*lo) {
      const Tensor V = load_tensor(lo_v), M = load_tensor(lo_m);
      const auto E = load_joint(lo_e, lo_num_seen);
      TargetSet targets;
      for (const auto& t : lo_targets) targets = concat_targets(targets, load_targets(t));
      const auto a = assignment_from_json(read_json(lo_assign));
      const auto w = load_weights(lo_weights);
      const Tensor S = class_similarity(V, E);
      const auto b = matched_loss(a, S, M, targets, w);
      const double cos = cosine_loss(V, E, targets, a);
      Json j;
      j["matched"] = to_json(b);
      j["cosine"] = cos;
      j["sm"] = sm_loss(b.total(), cos);
      j["weights"] = to_json(w);
      emit(j, lo_out);
    } else if (*ma) {
      const auto ks_ku = parse_ids(ma_ksplit);
      if (ks_ku.size() != 2 || ks_ku[0] < 0 || ks_ku[1] < 0)
        throw Error(ErrorCode::invalid_argument, "--ksplit expects K_s,K_u");
      const Tensor V = load_tensor(ma_v), M = load_tensor(ma_m);
      const std::size_t ks = static_cast<std::size_t>(ks_ku[0]), ku = static_cast<std::size_t>(ks_ku[1]);
      if (V.rank() != 2 || M.rank() != 3 || V.dim(0) < ks + ku || M.dim(0) != V.dim(0))
        throw Error(ErrorCode::shape_mismatch, "predictions do not hold K_s + K_u rows");
      const auto E = load_joint(ma_e, ma_num_seen);
      const auto r = split_match({slice_rows(V, 0, ks), slice_rows(M, 0, ks)},
                                 {slice_rows(V, ks, ku), slice_rows(M, ks, ku)},
                                 load_targets(ma_st), load_targets(ma_ct), E,
                                 load_weights(ma_weights));
      emit(to_json(r.combined), ma_out);
    } else if (*mf) {
      FeaturePyramid pyr{load_tensor(mf_f0), load_tensor(mf_f1), load_tensor(mf_f2), 2};
      if (pyr.f1.rank() == 3 && pyr.f2.rank() == 3 && pyr.f1.dim(1) > 0)
        pyr.ratio = pyr.f2.dim(1) / pyr.f1.dim(1);
      const auto params = mfe_params_from_tensor(load_tensor(mf_params), mf_groups, mf_eps);
      save_tensor(mfe_forward(pyr, params), mf_out);
    } else if (*gc) {
      const Stencil st = gc_stencil == "two" ? Stencil::two_point : Stencil::five_point;
      if (gc_op == "all") {
        Json arr = Json::array();
        for (const auto& op : gradcheck_ops()) arr.push_back(to_json(grad_check(op, gc_seed, gc_step, st)));
        std::cout << arr.dump(2) << '\n';
      } else {
        std::cout << to_json(grad_check(gc_op, gc_seed, gc_step, st)).dump(2) << '\n';
      }
    } else if (*in) {
      const Tensor F = load_tensor(in_features);
      const Tensor A = load_tensor(in_embeds);
      if (A.rank() != 2) throw Error(ErrorCode::shape_mismatch, "embeddings must be N x C");
      std::vector<int> seen = parse_ids(in_seen), unseen = parse_ids(in_unseen);
      if (seen.empty() && unseen.empty())
        for (std::size_t c = 0; c < A.dim(0); ++c) seen.push_back(static_cast<int>(c));
      if (seen.size() + unseen.size() != A.dim(0))
        throw Error(ErrorCode::shape_mismatch, "class id lists do not match embedding rows");
      const auto E = build_joint_embedding(slice_rows(A, 0, seen.size()),
                                           slice_rows(A, seen.size(), unseen.size()));
      const Tensor Q = load_tensor(in_queries);
      const auto q = inject_random_queries(QuerySet::split(Q, Q.dim(0), 0), in_kr, in_seed, in_sigma);
      const auto p = decode(q, F, decoder_params_from_tensor(load_tensor(in_decoder)));
      save_tensor(assemble_semantic_map(class_similarity(p.V, E), p.M, seen, unseen), in_out);
    } else if (*ev) {
      EvalConfig cfg;
      cfg.num_classes = ev_classes;
      cfg.seen_ids = parse_ids(ev_seen);
      cfg.unseen_ids = parse_ids(ev_unseen);
      cfg.ignore_id = ev_ignore;
      cfg.percent = !ev_fraction;
      const auto r = evaluate(load_tensor(ev_pred), load_tensor(ev_gt), cfg);
      emit(to_json(r, cfg), ev_out);
    } else if (*gs) {
      spec.height = spec.width = gs_size;
      const auto fx = gen_synth(spec);
      save_synth(fx, spec, gs_dir);
    } else if (*pl) {
      auto cfg = load_pipeline_config(pl_config);
      if (!pl_out.empty()) cfg.out_dir = pl_out;
      if (pl_threads > 0) cfg.threads = pl_threads;
      const auto r = run_pipeline(cfg);
      std::cout << to_json(r.report, r.eval).dump(2) << '\n';
    }
  } catch (const Error& e) {
    std::cerr << "smseg: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "smseg: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
