#pragma once

#include <cstddef>
#include <functional>
#include <vector>

namespace predflow {

// Worker count: PREDFLOW_THREADS if set (>= 1), else hardware concurrency.
std::size_t worker_count();

// Calls fn(i) for i in [0, n) across worker threads. Callers write results
// into slot i and reduce in index order, which keeps sums independent of the
// worker count.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

template <typename T>
std::vector<T> parallel_map(std::size_t n, const std::function<T(std::size_t)>& fn) {
  std::vector<T> out(n);
  parallel_for(n, [&](std::size_t i) { out[i] = fn(i); });
  return out;
}

}  // namespace predflow
