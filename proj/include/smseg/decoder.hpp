#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "smseg/embeddings.hpp"
#include "smseg/matcher.hpp"
#include "smseg/tensor.hpp"

namespace smseg {

/// Queries in layout order seen -> candidate -> random. Each block is K x C;
/// an empty block is a 0 x C tensor.
struct QuerySet {
  Tensor seen;
  Tensor candidate;
  Tensor random;

  std::size_t width() const;
  std::size_t ks() const { return seen.dim(0); }
  std::size_t ku() const { return candidate.dim(0); }
  std::size_t kr() const { return random.dim(0); }
  std::size_t size() const { return ks() + ku() + kr(); }

  /// All rows stacked: K x C.
  Tensor stacked() const;
  static QuerySet split(const Tensor& stacked, std::size_t ks, std::size_t ku);
  void validate() const;
};

QuerySet make_query_set(Tensor seen, Tensor candidate, Tensor random = {});

struct DecoderLayer {
  Tensor wq, wk, wv;  // C x C
};

struct DecoderParams {
  std::vector<DecoderLayer> layers;

  std::size_t width() const { return layers.empty() ? 0 : layers[0].wq.dim(0); }
  void validate() const;

  /// Wq = Wk = I, Wv = 0.
  static DecoderParams identity(std::size_t channels, std::size_t layers = 1);
};

/// Stored as L x 3 x C x C (Wq, Wk, Wv per layer); a 3 x C x C tensor is one layer.
Tensor decoder_params_tensor(const DecoderParams& p);
DecoderParams decoder_params_from_tensor(const Tensor& t);

struct Predictions {
  Tensor V;  // K x C
  Tensor M;  // K x H x W mask logits
  std::size_t ks = 0;
  std::size_t ku = 0;
  std::size_t kr = 0;

  std::size_t size() const { return ks + ku + kr; }
  GroupPredictions seen() const;
  GroupPredictions candidate() const;
  GroupPredictions random() const;
  /// Seen followed by candidate rows (random rows dropped).
  GroupPredictions trained() const;
};

/// Per layer A = softmax((Q Wq)(F' Wk)^T / sqrt(C)) over pixels, Q <- Q + A (F' Wv).
/// Then V = Q and M[k, p] = V[k] . F[:, p].
Predictions decode(const QuerySet& q, const Tensor& features, const DecoderParams& p);

/// Attention weights of the first layer (K x P), for inspection.
Tensor attention_weights(const QuerySet& q, const Tensor& features, const DecoderParams& p);

/// Appends kr rows of N(0, sigma^2). Element j of the new block (row-major)
/// takes PhiloxStream(seed).normal(offset + j) with offset = existing random
/// rows x C, scaled in double and rounded to f32.
QuerySet inject_random_queries(const QuerySet& q, std::size_t kr, std::uint64_t seed,
                               float sigma = 0.02f);

/// score[c, p] = sum_k S[k, c] sigmoid(M[k, p]); label = class id of the best
/// column, ties to the smallest class id. Column c < |seen_ids| is seen_ids[c],
/// otherwise unseen_ids[c - |seen_ids|]. Output is an H x W u8 map.
Tensor assemble_semantic_map(const Tensor& S, const Tensor& M, const std::vector<int>& seen_ids,
                             const std::vector<int>& unseen_ids);

}  // namespace smseg
