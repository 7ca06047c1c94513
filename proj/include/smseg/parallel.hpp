#pragma once

#include <cstddef>
#include <functional>

namespace smseg {

/// Worker count used by data-parallel loops. Defaults to 1.
void set_num_threads(int n);
int num_threads();

/// Calls fn(i) for every i in [0, n). Each index is handled by exactly one
/// worker, so results are thread-count independent as long as fn only writes
/// to its own output slot.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace smseg
