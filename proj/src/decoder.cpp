#include "smseg/decoder.hpp"

#include <cmath>
#include <string>

#include "smseg/losses.hpp"
#include "smseg/parallel.hpp"
#include "smseg/philox.hpp"

namespace smseg {

namespace {

bool is_block(const Tensor& t) { return t.rank() == 2 && t.dtype() == DType::f32; }

Tensor rows_of(const Tensor& t, std::size_t begin, std::size_t count) {
  const std::size_t c = t.dim(1);
  auto s = t.f32().subspan(begin * c, count * c);
  return Tensor::from_f32({count, c}, {s.begin(), s.end()});
}

Tensor mask_rows(const Tensor& m, std::size_t begin, std::size_t count) {
  const std::size_t p = m.dim(1) * m.dim(2);
  auto s = m.f32().subspan(begin * p, count * p);
  return Tensor::from_f32({count, m.dim(1), m.dim(2)}, {s.begin(), s.end()});
}

}  // namespace

std::size_t QuerySet::width() const {
  for (const Tensor* t : {&seen, &candidate, &random})
    if (t->rank() == 2) return t->dim(1);
  return 0;
}

void QuerySet::validate() const {
  const std::size_t c = width();
  for (const Tensor* t : {&seen, &candidate, &random}) {
    if (t->rank() == 1 && t->numel() == 0) continue;
    if (!is_block(*t)) throw Error(ErrorCode::shape_mismatch, "query blocks must be K x C f32");
    if (t->dim(1) != c) throw Error(ErrorCode::shape_mismatch, "query blocks differ in width");
  }
}

Tensor QuerySet::stacked() const {
  validate();
  std::vector<float> data;
  data.reserve(size() * width());
  for (const Tensor* t : {&seen, &candidate, &random})
    data.insert(data.end(), t->f32().begin(), t->f32().end());
  return Tensor::from_f32({size(), width()}, std::move(data));
}

QuerySet QuerySet::split(const Tensor& stacked, std::size_t ks, std::size_t ku) {
  if (!is_block(stacked)) throw Error(ErrorCode::shape_mismatch, "queries must be K x C f32");
  const std::size_t k = stacked.dim(0);
  if (ks + ku > k)
    throw Error(ErrorCode::shape_mismatch, "query split " + std::to_string(ks) + "," +
                                               std::to_string(ku) + " exceeds " +
                                               std::to_string(k) + " rows");
  return make_query_set(rows_of(stacked, 0, ks), rows_of(stacked, ks, ku),
                        rows_of(stacked, ks + ku, k - ks - ku));
}

QuerySet make_query_set(Tensor seen, Tensor candidate, Tensor random) {
  QuerySet q{std::move(seen), std::move(candidate), std::move(random)};
  const std::size_t c = q.width();
  for (Tensor* t : {&q.seen, &q.candidate, &q.random})
    if (t->rank() == 1 && t->numel() == 0) *t = Tensor::zeros(DType::f32, {0, c});
  q.validate();
  return q;
}

void DecoderParams::validate() const {
  if (layers.empty()) throw Error(ErrorCode::invalid_argument, "decoder needs at least one layer");
  const std::size_t c = width();
  for (const auto& l : layers)
    for (const Tensor* w : {&l.wq, &l.wk, &l.wv})
      if (!is_block(*w) || w->dim(0) != c || w->dim(1) != c)
        throw Error(ErrorCode::shape_mismatch, "decoder projections must be C x C f32");
}

DecoderParams DecoderParams::identity(std::size_t channels, std::size_t layers) {
  std::vector<float> eye(channels * channels, 0.0f);
  for (std::size_t i = 0; i < channels; ++i) eye[i * channels + i] = 1.0f;
  DecoderParams p;
  for (std::size_t l = 0; l < layers; ++l)
    p.layers.push_back({Tensor::from_f32({channels, channels}, eye),
                        Tensor::from_f32({channels, channels}, eye),
                        Tensor::zeros(DType::f32, {channels, channels})});
  return p;
}

Tensor decoder_params_tensor(const DecoderParams& p) {
  p.validate();
  const std::size_t c = p.width();
  std::vector<float> data;
  for (const auto& l : p.layers)
    for (const Tensor* w : {&l.wq, &l.wk, &l.wv}) data.insert(data.end(), w->f32().begin(), w->f32().end());
  return Tensor::from_f32({p.layers.size(), 3, c, c}, std::move(data));
}

DecoderParams decoder_params_from_tensor(const Tensor& t) {
  if (t.dtype() != DType::f32) throw Error(ErrorCode::bad_dtype, "decoder parameters must be f32");
  Tensor u = t;
  if (t.rank() == 3) u = t.reshaped({1, t.dim(0), t.dim(1), t.dim(2)});
  if (u.rank() != 4 || u.dim(1) != 3 || u.dim(2) != u.dim(3))
    throw Error(ErrorCode::shape_mismatch, "decoder parameters must be L x 3 x C x C");
  const std::size_t c = u.dim(2), n = c * c;
  DecoderParams p;
  for (std::size_t l = 0; l < u.dim(0); ++l) {
    auto slice = [&](std::size_t j) {
      auto s = u.f32().subspan((l * 3 + j) * n, n);
      return Tensor::from_f32({c, c}, {s.begin(), s.end()});
    };
    p.layers.push_back({slice(0), slice(1), slice(2)});
  }
  p.validate();
  return p;
}

GroupPredictions Predictions::seen() const { return {rows_of(V, 0, ks), mask_rows(M, 0, ks)}; }
GroupPredictions Predictions::candidate() const {
  return {rows_of(V, ks, ku), mask_rows(M, ks, ku)};
}
GroupPredictions Predictions::random() const {
  return {rows_of(V, ks + ku, kr), mask_rows(M, ks + ku, kr)};
}
GroupPredictions Predictions::trained() const {
  return {rows_of(V, 0, ks + ku), mask_rows(M, 0, ks + ku)};
}

namespace {

struct Pixels {
  std::size_t count = 0;
  std::size_t channels = 0;
  std::vector<double> rows;  // P x C
};

Pixels flatten_pixels(const Tensor& f) {
  if (f.rank() != 3 || f.dtype() != DType::f32)
    throw Error(ErrorCode::shape_mismatch, "features must be C x H x W f32");
  Pixels px{f.dim(1) * f.dim(2), f.dim(0), {}};
  px.rows.resize(px.count * px.channels);
  auto d = f.f32();
  for (std::size_t c = 0; c < px.channels; ++c)
    for (std::size_t p = 0; p < px.count; ++p) px.rows[p * px.channels + c] = d[c * px.count + p];
  return px;
}

// out = x W for row-major x (n x C) and W (C x C).
std::vector<double> project(const std::vector<double>& x, std::size_t n, const Tensor& w) {
  const std::size_t c = w.dim(0);
  auto wd = w.f32();
  std::vector<double> out(n * c, 0.0);
  parallel_for(n, [&](std::size_t i) {
    for (std::size_t j = 0; j < c; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < c; ++k) s += x[i * c + k] * wd[k * c + j];
      out[i * c + j] = s;
    }
  });
  return out;
}

// Softmax attention row of query k over all pixels.
void attention_row(const double* q, const std::vector<double>& keys, std::size_t P, std::size_t C,
                   double* out) {
  const double scale = 1.0 / std::sqrt(static_cast<double>(C));
  double mx = -INFINITY;
  for (std::size_t p = 0; p < P; ++p) {
    double s = 0.0;
    for (std::size_t c = 0; c < C; ++c) s += q[c] * keys[p * C + c];
    out[p] = s * scale;
    mx = std::max(mx, out[p]);
  }
  double z = 0.0;
  for (std::size_t p = 0; p < P; ++p) {
    out[p] = std::exp(out[p] - mx);
    z += out[p];
  }
  for (std::size_t p = 0; p < P; ++p) out[p] /= z;
}

void check_inputs(const QuerySet& q, const Pixels& px, const DecoderParams& p) {
  q.validate();
  p.validate();
  if (q.size() > 0 && q.width() != px.channels)
    throw Error(ErrorCode::shape_mismatch, "query width " + std::to_string(q.width()) +
                                               " does not match feature channels " +
                                               std::to_string(px.channels));
  if (p.width() != px.channels)
    throw Error(ErrorCode::shape_mismatch, "decoder width does not match feature channels");
}

}  // namespace

Tensor attention_weights(const QuerySet& q, const Tensor& features, const DecoderParams& p) {
  const Pixels px = flatten_pixels(features);
  check_inputs(q, px, p);
  const std::size_t K = q.size(), C = px.channels, P = px.count;
  const Tensor qs = q.stacked();
  std::vector<double> Q(qs.f32().begin(), qs.f32().end());
  const auto qp = project(Q, K, p.layers[0].wq);
  const auto kp = project(px.rows, P, p.layers[0].wk);
  std::vector<double> a(K * P);
  parallel_for(K, [&](std::size_t k) { attention_row(&qp[k * C], kp, P, C, &a[k * P]); });
  return Tensor::from_f32({K, P}, std::vector<float>(a.begin(), a.end()));
}

Predictions decode(const QuerySet& q, const Tensor& features, const DecoderParams& p) {
  const Pixels px = flatten_pixels(features);
  check_inputs(q, px, p);
  const std::size_t K = q.size(), C = px.channels, P = px.count;
  const Tensor qs = q.stacked();
  std::vector<double> Q(qs.f32().begin(), qs.f32().end());
  for (const auto& layer : p.layers) {
    const auto qp = project(Q, K, layer.wq);
    const auto kp = project(px.rows, P, layer.wk);
    const auto vp = project(px.rows, P, layer.wv);
    parallel_for(K, [&](std::size_t k) {
      std::vector<double> a(P);
      attention_row(&qp[k * C], kp, P, C, a.data());
      for (std::size_t c = 0; c < C; ++c) {
        double s = 0.0;
        for (std::size_t pp = 0; pp < P; ++pp) s += a[pp] * vp[pp * C + c];
        Q[k * C + c] += s;
      }
    });
  }

  Predictions out;
  out.ks = q.ks();
  out.ku = q.ku();
  out.kr = q.kr();
  std::vector<float> v(Q.begin(), Q.end());
  std::vector<float> m(K * P);
  parallel_for(K, [&](std::size_t k) {
    for (std::size_t pp = 0; pp < P; ++pp) {
      double s = 0.0;
      for (std::size_t c = 0; c < C; ++c) s += static_cast<double>(v[k * C + c]) * px.rows[pp * C + c];
      m[k * P + pp] = static_cast<float>(s);
    }
  });
  out.V = Tensor::from_f32({K, C}, std::move(v));
  out.M = Tensor::from_f32({K, features.dim(1), features.dim(2)}, std::move(m));
  return out;
}

QuerySet inject_random_queries(const QuerySet& q, std::size_t kr, std::uint64_t seed, float sigma) {
  q.validate();
  if (kr == 0) return q;
  const std::size_t c = q.width();
  if (c == 0) throw Error(ErrorCode::invalid_argument, "cannot infer query width from an empty set");
  const PhiloxStream rng(seed);
  const std::uint64_t offset = q.kr() * c;
  std::vector<float> data(q.random.f32().begin(), q.random.f32().end());
  data.reserve((q.kr() + kr) * c);
  for (std::size_t j = 0; j < kr * c; ++j)
    data.push_back(static_cast<float>(static_cast<double>(sigma) * rng.normal(offset + j)));
  QuerySet out = q;
  out.random = Tensor::from_f32({q.kr() + kr, c}, std::move(data));
  return out;
}

Tensor assemble_semantic_map(const Tensor& S, const Tensor& M, const std::vector<int>& seen_ids,
                             const std::vector<int>& unseen_ids) {
  if (S.rank() != 2 || M.rank() != 3 || S.dim(0) != M.dim(0))
    throw Error(ErrorCode::shape_mismatch, "S must be K x N and M K x H x W with the same K");
  const std::size_t K = S.dim(0), N = S.dim(1), H = M.dim(1), W = M.dim(2), P = H * W;
  if (seen_ids.size() + unseen_ids.size() != N)
    throw Error(ErrorCode::shape_mismatch, "class id lists do not cover the " + std::to_string(N) +
                                               " score columns");
  if (N == 0) throw Error(ErrorCode::invalid_argument, "no classes to assemble");
  std::vector<int> ids(seen_ids);
  ids.insert(ids.end(), unseen_ids.begin(), unseen_ids.end());
  for (int id : ids)
    if (id < 0 || id > 254)
      throw Error(ErrorCode::out_of_range, "class id " + std::to_string(id) + " outside [0, 254]");
  auto s = S.f32();
  auto m = M.f32();
  std::vector<std::uint8_t> labels(P);
  parallel_for(P, [&](std::size_t p) {
    std::vector<double> score(N, 0.0);
    for (std::size_t k = 0; k < K; ++k) {
      const double g = sigmoid(static_cast<double>(m[k * P + p]));
      for (std::size_t c = 0; c < N; ++c) score[c] += static_cast<double>(s[k * N + c]) * g;
    }
    std::size_t best = 0;
    for (std::size_t c = 1; c < N; ++c)
      if (score[c] > score[best] || (score[c] == score[best] && ids[c] < ids[best])) best = c;
    labels[p] = static_cast<std::uint8_t>(ids[best]);
  });
  return Tensor::from_u8({H, W}, std::move(labels));
}

}  // namespace smseg
