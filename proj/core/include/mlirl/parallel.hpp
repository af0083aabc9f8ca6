#pragma once

#include <cstddef>
#include <functional>

namespace mlirl {

/// Number of worker threads used by parallel_for. Defaults to 1.
void set_thread_count(std::size_t n);
std::size_t thread_count();

/// Calls fn(i) for every i in [0, n). Work is split into contiguous blocks;
/// callers write results into slot i and reduce afterwards in index order,
/// which keeps every reduction independent of the thread count.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace mlirl
