#pragma once

// Chunked N(0, I) sample matrices. Row chunk c always comes from the stream
// derive_seed(seed, "normal-chunk", c), so any prefix of rows is identical
// across sample sizes and the result does not depend on the worker count.

#include <Eigen/Dense>

#include <algorithm>
#include <cstdint>
#include <span>

#include "overem/parallel.hpp"
#include "overem/rng.hpp"

namespace overem {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline constexpr std::size_t kChunkRows = 8192;

inline std::size_t chunk_count(std::size_t n) { return (n + kChunkRows - 1) / kChunkRows; }

/// Writes rows [c*kChunkRows, min(n, (c+1)*kChunkRows)) of the stream into `out`
/// (row-major, d columns). `out` must hold exactly that many rows.
inline void fill_normal_chunk(std::span<double> out, std::uint64_t seed, std::size_t chunk) {
  rng::fill_standard_normal(out, rng::derive_seed(seed, "normal-chunk", chunk));
}

inline std::size_t chunk_rows(std::size_t n, std::size_t chunk) {
  return std::min(n, (chunk + 1) * kChunkRows) - chunk * kChunkRows;
}

inline RowMatrix standard_normal_rows(std::size_t n, int d, std::uint64_t seed) {
  RowMatrix z(static_cast<Eigen::Index>(n), d);
  const std::size_t width = static_cast<std::size_t>(d);
  parallel::for_each_task(chunk_count(n), [&](std::size_t c) {
    std::span<double> out(z.data() + c * kChunkRows * width, chunk_rows(n, c) * width);
    fill_normal_chunk(out, seed, c);
  });
  return z;
}

}  // namespace overem
