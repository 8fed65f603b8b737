#pragma once

// Data-parallel helpers whose results never depend on the worker count:
// work is cut into fixed-size blocks, every block is summed in a fixed order,
// and block partials are merged by a pairwise tree.

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <cstdlib>
#include <span>
#include <string>
#include <thread>
#include <vector>

namespace overem::parallel {

inline constexpr std::size_t kBlockSize = 512;

/// Worker count: OVEREM_THREADS if set and positive, else hardware concurrency.
inline unsigned worker_count() {
  if (const char* env = std::getenv("OVEREM_THREADS")) {
    char* end = nullptr;
    long v = std::strtol(env, &end, 10);
    if (end != env && v > 0) return static_cast<unsigned>(v);
  }
  unsigned hc = std::thread::hardware_concurrency();
  return hc == 0 ? 1u : hc;
}

/// Calls fn(i) for i in [0, n_tasks) on up to worker_count() threads.
template <class F>
void for_each_task(std::size_t n_tasks, F&& fn) {
  unsigned workers = std::min<std::size_t>(worker_count(), n_tasks);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n_tasks; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::jthread> pool;
  pool.reserve(workers);
  for (unsigned w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n_tasks; i = next++) fn(i);
    });
  }
}

namespace detail {

inline void tree_merge(std::vector<double>& partials, std::size_t width, std::size_t lo,
                       std::size_t hi) {
  if (hi - lo <= 1) return;
  std::size_t mid = lo + (hi - lo) / 2;
  tree_merge(partials, width, lo, mid);
  tree_merge(partials, width, mid, hi);
  double* dst = partials.data() + lo * width;
  const double* src = partials.data() + mid * width;
  for (std::size_t c = 0; c < width; ++c) dst[c] += src[c];
}

}  // namespace detail

/// Merges `n_parts` contiguous partial-sum rows of length `width` by a pairwise tree.
inline std::vector<double> tree_sum(std::vector<double> partials, std::size_t width) {
  std::size_t n_parts = width == 0 ? 0 : partials.size() / width;
  if (n_parts == 0) return std::vector<double>(width, 0.0);
  detail::tree_merge(partials, width, 0, n_parts);
  partials.resize(width);
  return partials;
}

/// Sums `width` accumulators over items [0, n). `contrib(i, acc)` adds item i into acc.
template <class F>
std::vector<double> reduce(std::size_t n, std::size_t width, F&& contrib) {
  std::size_t n_blocks = (n + kBlockSize - 1) / kBlockSize;
  std::vector<double> partials(n_blocks * width, 0.0);
  for_each_task(n_blocks, [&](std::size_t b) {
    std::span<double> acc(partials.data() + b * width, width);
    std::size_t end = std::min(n, (b + 1) * kBlockSize);
    for (std::size_t i = b * kBlockSize; i < end; ++i) contrib(i, acc);
  });
  return tree_sum(std::move(partials), width);
}

}  // namespace overem::parallel
