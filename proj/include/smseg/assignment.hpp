#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "smseg/tensor.hpp"

namespace smseg {

enum class Group { seen, candidate, combined };

const char* to_string(Group g);

/// Ground-truth or pseudo targets: joint class index plus a binary mask each.
struct TargetSet {
  std::vector<std::size_t> class_ids;  // joint indices into E
  Tensor masks = Tensor::zeros(DType::u8, {0, 1, 1});  // T x H x W, {0,1}

  std::size_t size() const { return class_ids.size(); }
  std::span<const std::uint8_t> mask(std::size_t t) const;
  std::size_t pixels() const { return masks.dim(1) * masks.dim(2); }
};

TargetSet make_targets(std::vector<std::size_t> class_ids, Tensor masks);
TargetSet concat_targets(const TargetSet& a, const TargetSet& b);

struct Pair {
  std::size_t query = 0;
  std::size_t target = 0;
  float cost = 0.0f;
  Group group = Group::seen;
};

struct Assignment {
  std::vector<Pair> pairs;  // ascending target order within each group
  Group group = Group::seen;
  std::vector<std::size_t> unmatched_queries;

  /// Sum of pair costs in pair order, f64.
  double total_cost() const;
};

}  // namespace smseg
