#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <cstring>

#include "smseg/clustering.hpp"
#include "smseg/decoder.hpp"
#include "smseg/embeddings.hpp"
#include "smseg/gradcheck.hpp"
#include "smseg/losses.hpp"
#include "smseg/matcher.hpp"
#include "smseg/metrics.hpp"
#include "smseg/mfe.hpp"
#include "smseg/parallel.hpp"
#include "smseg/philox.hpp"
#include "smseg/pipeline.hpp"
#include "smseg/synth.hpp"

namespace py = pybind11;
using namespace smseg;

namespace {

// numpy <-> Tensor, always by copy.
Tensor to_tensor(const py::array& a) {
  Dims dims(a.shape(), a.shape() + a.ndim());
  if (py::isinstance<py::array_t<std::uint8_t>>(a) || a.dtype().is(py::dtype::of<bool>())) {
    auto c = py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>::ensure(a);
    std::vector<std::uint8_t> v(c.data(), c.data() + c.size());
    return Tensor::from_u8(dims, std::move(v));
  }
  auto c = py::array_t<float, py::array::c_style | py::array::forcecast>::ensure(a);
  if (!c) throw Error(ErrorCode::bad_dtype, "expected a numeric array");
  std::vector<float> v(c.data(), c.data() + c.size());
  return Tensor::from_f32(dims, std::move(v));
}

py::array to_numpy(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.dims().begin(), t.dims().end());
  if (t.dtype() == DType::u8) {
    py::array_t<std::uint8_t> out(shape);
    if (t.numel()) std::memcpy(out.mutable_data(), t.u8().data(), t.numel());
    return std::move(out);
  }
  py::array_t<float> out(shape);
  if (t.numel()) std::memcpy(out.mutable_data(), t.f32().data(), t.numel() * sizeof(float));
  return std::move(out);
}

py::dict assignment_dict(const Assignment& a) {
  py::list pairs;
  for (const auto& p : a.pairs)
    pairs.append(py::dict(py::arg("query") = p.query, py::arg("target") = p.target,
                          py::arg("cost") = p.cost, py::arg("group") = to_string(p.group)));
  return py::dict(py::arg("pairs") = pairs, py::arg("unmatched") = a.unmatched_queries,
                  py::arg("total_cost") = a.total_cost());
}

WindowConfig window_config(std::vector<int> windows, int iters, float tol, const std::string& metric) {
  WindowConfig cfg;
  cfg.window_sizes = std::move(windows);
  cfg.kmeans_iters = iters;
  cfg.kmeans_tol = tol;
  if (metric == "cosine") cfg.metric = Metric::cosine;
  else if (metric == "euclidean") cfg.metric = Metric::euclidean;
  else throw Error(ErrorCode::invalid_argument, "metric must be cosine or euclidean");
  cfg.validate();
  return cfg;
}

py::dict metrics_dict(const MetricsReport& r) {
  py::list per;
  for (const auto& v : r.per_class_iou) per.append(v ? py::cast(*v) : py::none());
  return py::dict(py::arg("per_class_iou") = per, py::arg("siou") = r.siou, py::arg("uiou") = r.uiou,
                  py::arg("hiou") = r.hiou);
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "smseg core bindings";

  auto err = py::register_exception<Error>(m, "SmsegError", PyExc_RuntimeError);
  (void)err;

  m.def("set_num_threads", &set_num_threads, py::arg("n"));

  // tensors
  m.def("save_tensor", [](const py::array& a, const std::filesystem::path& p) { save_tensor(to_tensor(a), p); },
        py::arg("array"), py::arg("path"));
  m.def("load_tensor", [](const std::filesystem::path& p) { return to_numpy(load_tensor(p)); }, py::arg("path"));
  m.def("encode_tensor", [](const py::array& a) {
    const auto b = encode_tensor(to_tensor(a));
    return py::bytes(reinterpret_cast<const char*>(b.data()), b.size());
  });

  // clustering
  m.def("window_seeds", [](const py::array& f, int s) { return to_numpy(window_seeds(to_tensor(f), s).seeds); },
        py::arg("features"), py::arg("s"));
  m.def(
      "kmeans",
      [](const py::array& f, std::vector<int> windows, int iters, float tol, const std::string& metric) {
        const auto x = to_tensor(f);
        const auto cfg = window_config(std::move(windows), iters, tol, metric);
        const auto r = kmeans(x, multi_scale_seeds(x, cfg), cfg);
        return py::make_tuple(to_numpy(assignments_tensor(r)), to_numpy(r.centroids), r.objective_trace);
      },
      py::arg("features"), py::arg("windows") = std::vector<int>{8, 16, 32}, py::arg("iters") = 10,
      py::arg("tol") = 1e-4f, py::arg("metric") = "cosine");
  m.def(
      "fuse_masks",
      [](const py::array& assign, const py::array& cent, float tau) {
        const auto f = fuse_masks(cluster_result_from_tensors(to_tensor(assign), to_tensor(cent)), tau);
        return py::make_tuple(to_numpy(f.masks), to_numpy(f.centroids));
      },
      py::arg("assignments"), py::arg("centroids"), py::arg("tau") = 0.9f);
  m.def(
      "restrict_candidates",
      [](const py::array& masks, const py::array& cent, const py::array& ignore, std::size_t min_area) {
        const auto c = restrict_candidates(FusedMasks{to_tensor(masks), to_tensor(cent)}, to_tensor(ignore), min_area);
        return py::make_tuple(to_numpy(c.masks), to_numpy(c.centroids));
      },
      py::arg("masks"), py::arg("centroids"), py::arg("ignore"), py::arg("min_area") = 16);
  m.def(
      "pool_region_embeddings",
      [](const py::array& f, const py::array& masks) {
        CandidateMaskSet c;
        c.masks = to_tensor(masks);
        c.count = c.masks.rank() == 3 ? c.masks.dim(0) : 0;
        c.centroids = Tensor::zeros(DType::f32, {c.count, 1});
        return to_numpy(pool_region_embeddings(to_tensor(f), c));
      },
      py::arg("features"), py::arg("masks"));

  // losses
  m.def("dice_loss", [](std::vector<float> p, std::vector<float> y, double eps) {
    return dice_loss<float, float>(p, y, eps);
  }, py::arg("m"), py::arg("y"), py::arg("eps") = 1.0);
  m.def("iou_loss", [](std::vector<float> p, std::vector<float> y, double eps) {
    return iou_loss<float, float>(p, y, eps);
  }, py::arg("m"), py::arg("y"), py::arg("eps") = 1.0);
  m.def("bce_mask", [](std::vector<float> x, std::vector<float> y) { return bce_mask<float, float>(x, y); },
        py::arg("logits"), py::arg("y"));
  m.def("focal_loss", [](std::vector<float> p, std::optional<std::size_t> t, double a, double g) {
    return focal_loss<float>(p, t, a, g);
  }, py::arg("p"), py::arg("target"), py::arg("alpha") = 0.25, py::arg("gamma") = 2.0);
  m.def(
      "cross_entropy_map",
      [](const py::array& logits, const py::array_t<std::int32_t, py::array::c_style | py::array::forcecast>& labels,
         std::int32_t ignore_id) {
        const auto l = to_tensor(logits);
        std::vector<std::int32_t> lab(labels.data(), labels.data() + labels.size());
        return cross_entropy_map<float>(l.f32(), l.dim(0), lab, ignore_id);
      },
      py::arg("logits"), py::arg("labels"), py::arg("ignore_id") = 255);

  // matching
  m.def(
      "hungarian",
      [](const py::array& cost) {
        const auto c = to_tensor(cost);
        if (c.rank() != 2) throw Error(ErrorCode::shape_mismatch, "cost must be K x T");
        return assignment_dict(hungarian(c.f32(), c.dim(0), c.dim(1)));
      },
      py::arg("cost"));
  m.def(
      "split_match",
      [](const py::array& V, const py::array& M, std::size_t ks, const py::array& E, std::size_t num_seen,
         std::vector<std::size_t> seen_ids, const py::array& seen_masks, std::vector<std::size_t> cand_ids,
         const py::array& cand_masks) {
        const auto v = to_tensor(V), mk = to_tensor(M), e = to_tensor(E);
        const std::size_t K = v.dim(0), C = v.dim(1), P = mk.numel() / (K ? K : 1);
        if (ks > K) throw Error(ErrorCode::shape_mismatch, "ks exceeds the query count");
        auto rows = [&](const Tensor& t, std::size_t lo, std::size_t n, std::size_t w, Dims dims) {
          std::vector<float> d(t.f32().begin() + long(lo * w), t.f32().begin() + long((lo + n) * w));
          return Tensor::from_f32(std::move(dims), std::move(d));
        };
        const Dims md{mk.dim(1), mk.dim(2)};
        GroupPredictions sp{rows(v, 0, ks, C, {ks, C}), rows(mk, 0, ks, P, {ks, md[0], md[1]})};
        GroupPredictions cp{rows(v, ks, K - ks, C, {K - ks, C}), rows(mk, ks, K - ks, P, {K - ks, md[0], md[1]})};
        const std::size_t rows_e = e.dim(0);
        const auto Es = rows(e, 0, num_seen, e.dim(1), {num_seen, e.dim(1)});
        const auto Eu = rows(e, num_seen, rows_e - num_seen, e.dim(1), {rows_e - num_seen, e.dim(1)});
        const auto r = split_match(sp, cp, make_targets(seen_ids, to_tensor(seen_masks)),
                                   make_targets(cand_ids, to_tensor(cand_masks)), build_joint_embedding(Es, Eu),
                                   CostWeights{});
        return assignment_dict(r.combined);
      },
      py::arg("V"), py::arg("M"), py::arg("ks"), py::arg("E"), py::arg("num_seen"), py::arg("seen_ids"),
      py::arg("seen_masks"), py::arg("cand_ids"), py::arg("cand_masks"));

  // mfe
  m.def(
      "mfe_forward",
      [](const py::array& f0, const py::array& f1, const py::array& f2, const py::array& params, std::size_t groups) {
        FeaturePyramid pyr{to_tensor(f0), to_tensor(f1), to_tensor(f2), 2};
        pyr.ratio = pyr.f1.dim(1) ? pyr.f2.dim(1) / pyr.f1.dim(1) : 2;
        return to_numpy(mfe_forward(pyr, mfe_params_from_tensor(to_tensor(params), groups)));
      },
      py::arg("f0"), py::arg("f1"), py::arg("f2"), py::arg("params"), py::arg("groups") = 8);
  m.def(
      "random_mfe_params",
      [](std::size_t c, std::uint64_t seed, double sigma, std::size_t groups) {
        return to_numpy(mfe_params_tensor(random_mfe_params(c, seed, sigma, groups)));
      },
      py::arg("channels"), py::arg("seed") = 0, py::arg("sigma") = 0.1, py::arg("groups") = 8);
  m.def(
      "grad_check",
      [](const std::string& op, std::uint64_t seed, double h) { return grad_check(op, seed, h).max_rel_error; },
      py::arg("op"), py::arg("seed") = 0, py::arg("h") = 1e-3);
  m.def("gradcheck_ops", &gradcheck_ops);

  // decoder / inference
  m.def(
      "random_queries",
      [](std::size_t kr, std::size_t width, std::uint64_t seed, float sigma) {
        const auto q = make_query_set(Tensor::zeros(DType::f32, {0, width}), Tensor::zeros(DType::f32, {0, width}));
        return to_numpy(inject_random_queries(q, kr, seed, sigma).random);
      },
      py::arg("kr"), py::arg("width"), py::arg("seed") = 0, py::arg("sigma") = 0.02f);
  m.def(
      "assemble_semantic_map",
      [](const py::array& S, const py::array& M, std::vector<int> seen, std::vector<int> unseen) {
        return to_numpy(assemble_semantic_map(to_tensor(S), to_tensor(M), seen, unseen));
      },
      py::arg("S"), py::arg("M"), py::arg("seen_ids"), py::arg("unseen_ids"));
  m.def("philox4x32_10", &philox4x32_10, py::arg("counter"), py::arg("key"));

  // metrics
  m.def("hiou", &hiou, py::arg("s"), py::arg("u"));
  m.def(
      "evaluate",
      [](const py::array& pred, const py::array& gt, std::size_t num_classes, std::vector<int> seen,
         std::vector<int> unseen, int ignore_id) {
        EvalConfig cfg;
        cfg.num_classes = num_classes;
        cfg.seen_ids = std::move(seen);
        cfg.unseen_ids = std::move(unseen);
        cfg.ignore_id = ignore_id;
        return metrics_dict(evaluate(to_tensor(pred), to_tensor(gt), cfg));
      },
      py::arg("pred"), py::arg("gt"), py::arg("num_classes"), py::arg("seen_ids"), py::arg("unseen_ids"),
      py::arg("ignore_id") = 255);

  // fixtures and the full pipeline
  m.def(
      "gen_synth",
      [](std::uint64_t seed, std::size_t blobs, std::size_t seen, std::size_t size, std::size_t dim, double noise) {
        SynthSpec spec{seed, blobs, seen, size, size, dim, noise};
        const auto fx = gen_synth(spec);
        return py::dict(py::arg("features") = to_numpy(fx.features), py::arg("seen_labels") = to_numpy(fx.seen_labels),
                        py::arg("ignore") = to_numpy(fx.ignore), py::arg("seen_embeddings") = to_numpy(fx.seen_embeddings),
                        py::arg("unseen_embeddings") = to_numpy(fx.unseen_embeddings), py::arg("gt") = to_numpy(fx.gt),
                        py::arg("blob_masks") = to_numpy(fx.blob_masks), py::arg("seen_ids") = fx.seen_ids,
                        py::arg("unseen_ids") = fx.unseen_ids);
      },
      py::arg("seed") = 0, py::arg("blobs") = 4, py::arg("seen") = 2, py::arg("size") = 64, py::arg("dim") = 16,
      py::arg("noise") = 0.05);
  m.def(
      "save_synth",
      [](std::uint64_t seed, const std::filesystem::path& dir) {
        SynthSpec spec;
        spec.seed = seed;
        save_synth(gen_synth(spec), spec, dir);
      },
      py::arg("seed"), py::arg("out_dir"));
  m.def(
      "run_pipeline",
      [](const std::filesystem::path& config, std::optional<std::filesystem::path> out_dir, int threads) {
        auto cfg = load_pipeline_config(config);
        if (out_dir) cfg.out_dir = *out_dir;
        if (threads > 0) cfg.threads = threads;
        const auto r = run_pipeline(cfg);
        py::dict out = metrics_dict(r.report);
        out["candidates"] = r.candidates.count;
        out["assignment"] = assignment_dict(r.match.combined);
        out["labels"] = to_numpy(r.labels);
        return out;
      },
      py::arg("config"), py::arg("out_dir") = py::none(), py::arg("threads") = 0);
}
