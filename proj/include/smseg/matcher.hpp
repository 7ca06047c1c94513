#pragma once

#include <cstddef>
#include <vector>

#include "smseg/assignment.hpp"
#include "smseg/embeddings.hpp"
#include "smseg/losses.hpp"

namespace smseg {

/// Minimum-cost assignment of every target (column) to a distinct query (row)
/// of a K x T matrix, T <= K. Among optimal assignments the one whose query
/// sequence, read in ascending target order, is lexicographically smallest is
/// returned. Pairs are listed in ascending target order.
Assignment hungarian(std::span<const float> cost, std::size_t queries, std::size_t targets);
Assignment hungarian(const CostMatrix& cost);

/// Predictions of one query group: V (K x C) and mask logits (K x H x W).
struct GroupPredictions {
  Tensor V;
  Tensor M;

  std::size_t size() const { return V.rank() == 2 ? V.dim(0) : 0; }
};

struct SplitMatchResult {
  Assignment seen;       // local query / target indices
  Assignment candidate;  // local query / target indices
  Assignment combined;   // candidate queries offset by K_s, targets by T_s
  TargetSet targets;     // seen targets followed by candidate targets
};

/// Builds one cost matrix per group, solves each independently and
/// concatenates the two assignments.
SplitMatchResult split_match(const GroupPredictions& seen_preds,
                             const GroupPredictions& cand_preds, const TargetSet& seen_targets,
                             const TargetSet& cand_targets, const JointEmbedding& E,
                             const CostWeights& w);

}  // namespace smseg
