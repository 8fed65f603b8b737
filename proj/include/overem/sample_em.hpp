#pragma once

// Finite-sample EM: seeded N(0, I) datasets, the sample EM operator M_n, the
// sample EM loop, the multi-seed statistical-rate experiment, and the
// empirical check of the sup-deviation between M_n and M.

#include <Eigen/Dense>

#include <boost/math/special_functions/erf.hpp>

#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "overem/engine.hpp"
#include "overem/errors.hpp"
#include "overem/mixture.hpp"
#include "overem/parallel.hpp"
#include "overem/population_em.hpp"
#include "overem/rng.hpp"
#include "overem/sampling.hpp"
#include "overem/simplex.hpp"
#include "overem/stats.hpp"

namespace overem {

struct DatasetOptions {
  /// Regenerate row chunks on demand instead of holding all n x d values.
  bool chunked = false;
  std::size_t memory_budget_values = 200'000'000;
};

/// n i.i.d. N(0, I_d) rows, fully determined by (seed, generator_id, n, d).
class Dataset {
 public:
  static constexpr const char* kGeneratorId = "mt19937_64+normal_distribution/chunk8192";

  Dataset(std::size_t n, int d, std::uint64_t seed, DatasetOptions opts = {}) : n_(n), d_(d), seed_(seed) {
    if (n < 1) throw DomainError("dataset needs n >= 1");
    if (d < 1) throw DomainError("dataset needs d >= 1");
    const double values = static_cast<double>(n) * static_cast<double>(d);
    if (!opts.chunked) {
      if (values > static_cast<double>(opts.memory_budget_values))
        throw ResourceError("dataset of " + std::to_string(n) + " x " + std::to_string(d) +
                            " exceeds the memory budget; enable chunked mode");
      samples_ = standard_normal_rows(n, d, seed);
      materialized_ = true;
    }
  }

  std::size_t n() const { return n_; }
  int d() const { return d_; }
  std::uint64_t seed() const { return seed_; }
  std::string generator_id() const { return kGeneratorId; }
  bool materialized() const { return materialized_; }

  /// All rows; only available for materialized datasets.
  const RowMatrix& samples() const {
    if (!materialized_) throw ResourceError("chunked dataset has no materialized sample matrix");
    return samples_;
  }

  std::size_t chunks() const { return chunk_count(n_); }

  /// Calls fn(chunk_rows_view) for chunk c, regenerating it when chunked.
  template <class F>
  void with_chunk(std::size_t c, F&& fn) const {
    const std::size_t rows = chunk_rows(n_, c);
    const std::size_t width = static_cast<std::size_t>(d_);
    if (materialized_) {
      Eigen::Map<const RowMatrix> view(samples_.data() + c * kChunkRows * width,
                                       static_cast<Eigen::Index>(rows), d_);
      fn(view);
    } else {
      std::vector<double> buf(rows * width);
      fill_normal_chunk(buf, seed_, c);
      Eigen::Map<const RowMatrix> view(buf.data(), static_cast<Eigen::Index>(rows), d_);
      fn(view);
    }
  }

 private:
  std::size_t n_;
  int d_;
  std::uint64_t seed_;
  bool materialized_ = false;
  RowMatrix samples_;
};

inline Dataset generate_dataset(std::size_t n, int d, std::uint64_t seed, DatasetOptions opts = {}) {
  return Dataset(n, d, seed, opts);
}

namespace detail {

// Per-chunk sums of `width` accumulators, merged by a pairwise tree over
// blocks within the chunk and then over chunks. Chunk and block boundaries
// depend only on n, so the total is reproducible bit for bit.
template <class F>
std::vector<double> reduce_dataset(const Dataset& data, std::size_t width, F&& contrib) {
  const std::size_t n_chunks = data.chunks();
  std::vector<double> partials(n_chunks * width, 0.0);
  for (std::size_t c = 0; c < n_chunks; ++c) {
    data.with_chunk(c, [&](const Eigen::Map<const RowMatrix>& rows) {
      auto sums = parallel::reduce(static_cast<std::size_t>(rows.rows()), width,
                                   [&](std::size_t i, std::span<double> acc) { contrib(rows, i, acc); });
      std::copy(sums.begin(), sums.end(), partials.begin() + static_cast<std::ptrdiff_t>(c * width));
    });
  }
  return parallel::tree_sum(std::move(partials), width);
}

}  // namespace detail

/// M_n(θ) = (1/n) Σ_i Σ_j w_j(Z_i; θ) (R^(j-1))ᵀ Z_i.
inline Eigen::VectorXd sample_em_operator(const SimplexFrame& frame, const MixtureSpec& spec,
                                          const Eigen::VectorXd& theta, const Dataset& data) {
  detail::check_compatible(frame, spec);
  if (data.d() != frame.d()) throw DimensionError("dataset dimension does not match the frame");
  if (theta.size() != frame.d()) throw DimensionError("theta has wrong dimension");
  detail::check_finite(theta, "theta");
  const int d = frame.d();
  const int k = frame.k();
  const Eigen::MatrixXd means = component_means(frame, theta);
  const double sum = detail::weight_sum(spec);
  // acc[j*d + a] accumulates Σ_i w_j(Z_i) Z_i[a].
  auto totals = detail::reduce_dataset(
      data, static_cast<std::size_t>(k * d),
      [&](const Eigen::Map<const RowMatrix>& rows, std::size_t i, std::span<double> acc) {
        const auto zi = rows.row(static_cast<Eigen::Index>(i));
        double s[64];
        for (int j = 0; j < k; ++j) s[j] = zi.dot(means.col(j).transpose());
        const auto kernel = detail::ExpSumKernel::eval(spec, s);
        const double denom = kernel.denominator(sum);
        for (int j = 0; j < k; ++j) {
          const double wj = spec.weights[j] * std::exp(s[j] - kernel.shift) / denom;
          for (int a = 0; a < d; ++a) acc[static_cast<std::size_t>(j * d + a)] += wj * zi[a];
        }
      });
  Eigen::VectorXd out = Eigen::VectorXd::Zero(d);
  for (int j = 0; j < k; ++j) {
    Eigen::Map<const Eigen::VectorXd> wz(totals.data() + j * d, d);
    out += frame.power(j).transpose() * wz;
  }
  return out / static_cast<double>(data.n());
}

/// θ̂_{t+1} = M_n(θ̂_t) for exactly max_iter steps; kl_t is the population KL
/// of θ̂_t under `engine` and grad_norm is the sample gradient ‖θ̂_t - M_n(θ̂_t)‖.
inline EmTrace run_sample_em(const ExpectationEngine& engine, const SimplexFrame& frame, const MixtureSpec& spec,
                             const Eigen::VectorXd& theta0, const Dataset& data, const RunOptions& opts = {}) {
  detail::check_engine(engine, frame, spec, theta0);
  EmTrace trace;
  detail::start_trace(trace, engine, frame, spec, theta0, opts);
  const double guard = 10.0 * theta0.norm() + 1.0;
  Eigen::VectorXd theta = theta0;
  Eigen::VectorXd mn = sample_em_operator(frame, spec, theta, data);
  trace.records.push_back(detail::make_record(engine, frame, spec, 0, theta, mn));
  for (int t = 1; t <= opts.max_iter; ++t) {
    theta = mn;
    if (!theta.allFinite() || theta.norm() > guard)
      throw DivergenceError("sample EM iterate left the divergence guard at t = " + std::to_string(t));
    if (theta.norm() > opts.init_radius) trace.left_init_ball = true;
    mn = sample_em_operator(frame, spec, theta, data);
    EmRecord rec = detail::make_record(engine, frame, spec, t, theta, mn);
    const double prev = trace.records.back().kl;
    if (prev > 0.0) rec.ratio = rec.kl / prev;
    trace.records.push_back(std::move(rec));
  }
  trace.stop_reason = StopReason::max_iter;
  return trace;
}

/// Default iteration budget T = ⌈3 log n⌉.
inline int default_iterations(std::size_t n, double factor = 3.0) {
  return std::max(1, static_cast<int>(std::ceil(factor * std::log(static_cast<double>(n)))));
}

/// Dataset seed for seed slot s. Independent of n, so the datasets for
/// different n share their leading rows.
inline std::uint64_t dataset_seed(std::uint64_t root, int slot) {
  return rng::derive_seed(root, "dataset", static_cast<std::uint64_t>(slot));
}

// ---------------------------------------------------------------------------
// Statistical-rate experiment

struct RateCell {
  std::size_t n = 0;
  int seed_slot = 0;
  std::uint64_t seed = 0;
  int iterations = 0;
  double final_kl = 0.0;
  double final_theta_norm = 0.0;
};

struct RateSummary {
  std::size_t n = 0;
  double median_kl = 0.0;
  double q25 = 0.0;
  double q75 = 0.0;
  double median_theta_norm = 0.0;
};

struct RateExperiment {
  std::vector<RateCell> cells;
  std::vector<RateSummary> summaries;
  std::optional<stats::LinearFit> kl_fit;     // log median KL vs log n
  std::optional<stats::LinearFit> theta_fit;  // log median ‖θ̂_T‖ vs log n
};

struct RateOptions {
  double iteration_factor = 3.0;
  double init_radius = 0.25;
};

inline RateExperiment run_rate_experiment(const ExpectationEngine& engine, const SimplexFrame& frame,
                                          const MixtureSpec& spec, const Eigen::VectorXd& theta0,
                                          const std::vector<std::size_t>& n_grid, int n_seeds,
                                          std::uint64_t root_seed, const RateOptions& ropts = {}) {
  if (n_grid.empty() || n_seeds < 1) throw DomainError("rate experiment needs a nonempty n grid and seeds");
  RateExperiment out;
  for (std::size_t n : n_grid) {
    std::vector<double> kls, norms;
    for (int s = 0; s < n_seeds; ++s) {
      RateCell cell;
      cell.n = n;
      cell.seed_slot = s;
      cell.seed = dataset_seed(root_seed, s);
      cell.iterations = default_iterations(n, ropts.iteration_factor);
      const Dataset data(n, frame.d(), cell.seed);
      RunOptions opts;
      opts.max_iter = cell.iterations;
      opts.init_radius = ropts.init_radius;
      const EmTrace trace = run_sample_em(engine, frame, spec, theta0, data, opts);
      cell.final_kl = trace.records.back().kl;
      cell.final_theta_norm = trace.records.back().theta.norm();
      kls.push_back(cell.final_kl);
      norms.push_back(cell.final_theta_norm);
      out.cells.push_back(cell);
    }
    out.summaries.push_back({n, stats::median(kls), stats::quantile(kls, 0.25), stats::quantile(kls, 0.75),
                             stats::median(norms)});
  }
  if (out.summaries.size() >= 2) {
    std::vector<double> x, ykl, yth;
    for (const auto& s : out.summaries) {
      x.push_back(std::log(static_cast<double>(s.n)));
      ykl.push_back(std::log(s.median_kl));
      yth.push_back(std::log(s.median_theta_norm));
    }
    out.kl_fit = stats::linear_fit(x, ykl);
    out.theta_fit = stats::linear_fit(x, yth);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Sup-deviation between the sample and population EM operators

/// `count` deterministic, well-spread unit vectors in R^d.
inline std::vector<Eigen::VectorXd> sphere_points(int d, int count) {
  std::vector<Eigen::VectorXd> pts;
  if (d == 1) {
    pts.push_back(Eigen::VectorXd::Constant(1, 1.0));
    if (count > 1) pts.push_back(Eigen::VectorXd::Constant(1, -1.0));
    return pts;
  }
  if (d == 2) {
    for (int i = 0; i < count; ++i) {
      const double a = 2.0 * std::numbers::pi * i / count;
      pts.push_back((Eigen::VectorXd(2) << std::cos(a), std::sin(a)).finished());
    }
    return pts;
  }
  // Halton points pushed through the normal quantile, then projected to the sphere.
  static constexpr int kPrimes[] = {2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53};
  if (d > 16) throw DomainError("sphere_points supports d <= 16");
  for (int i = 1; static_cast<int>(pts.size()) < count; ++i) {
    Eigen::VectorXd v(d);
    for (int a = 0; a < d; ++a) {
      double f = 1.0, r = 0.0;
      for (int idx = i; idx > 0; idx /= kPrimes[a]) {
        f /= kPrimes[a];
        r += f * (idx % kPrimes[a]);
      }
      v[a] = std::numbers::sqrt2 * boost::math::erf_inv(2.0 * r - 1.0);
    }
    if (v.norm() > 1e-12) pts.push_back(v.normalized());
  }
  return pts;
}

/// Points on spheres of radius {0.25, 0.5, 0.75, 1} × r, about `grid_size` in total.
inline std::vector<Eigen::VectorXd> theta_grid(int d, double radius, int grid_size) {
  const int per_sphere = std::max(1, (grid_size + 3) / 4);
  const auto dirs = sphere_points(d, per_sphere);
  std::vector<Eigen::VectorXd> grid;
  for (double frac : {0.25, 0.5, 0.75, 1.0})
    for (const auto& u : dirs) grid.push_back(frac * radius * u);
  return grid;
}

struct PerturbationCell {
  std::size_t n = 0;
  int seed_slot = 0;
  double sup_deviation = 0.0;
};

struct PerturbationSummary {
  std::size_t n = 0;
  double median = 0.0;
  double q25 = 0.0;
  double q75 = 0.0;
};

struct PerturbationReport {
  double radius = 0.0;
  std::size_t grid_points = 0;
  std::vector<PerturbationCell> cells;
  std::vector<PerturbationSummary> summaries;
  std::optional<stats::LinearFit> fit;  // log median sup-deviation vs log n
};

/// Grid lower bound on sup_{‖θ‖<=r} ‖M_n(θ) - M(θ)‖ for each (n, seed).
inline PerturbationReport perturbation_probe(const ExpectationEngine& engine, const SimplexFrame& frame,
                                             const MixtureSpec& spec, double radius,
                                             const std::vector<std::size_t>& n_grid, int theta_grid_size,
                                             int n_seeds, std::uint64_t root_seed) {
  if (!(radius > 0)) throw DomainError("perturbation_probe: radius must be positive");
  if (n_grid.empty() || theta_grid_size < 1 || n_seeds < 1)
    throw DomainError("perturbation_probe: grids must be nonempty");
  PerturbationReport rep;
  rep.radius = radius;
  const auto grid = theta_grid(frame.d(), radius, theta_grid_size);
  rep.grid_points = grid.size();
  std::vector<Eigen::VectorXd> population;
  for (const auto& th : grid) population.push_back(em_operator(engine, frame, spec, th));
  for (std::size_t n : n_grid) {
    std::vector<double> sups;
    for (int s = 0; s < n_seeds; ++s) {
      const Dataset data(n, frame.d(), dataset_seed(root_seed, s));
      double sup = 0.0;
      for (std::size_t g = 0; g < grid.size(); ++g)
        sup = std::max(sup, (sample_em_operator(frame, spec, grid[g], data) - population[g]).norm());
      rep.cells.push_back({n, s, sup});
      sups.push_back(sup);
    }
    rep.summaries.push_back({n, stats::median(sups), stats::quantile(sups, 0.25), stats::quantile(sups, 0.75)});
  }
  if (rep.summaries.size() >= 2) {
    std::vector<double> x, y;
    for (const auto& s : rep.summaries) {
      x.push_back(std::log(static_cast<double>(s.n)));
      y.push_back(std::log(s.median));
    }
    rep.fit = stats::linear_fit(x, y);
  }
  return rep;
}

}  // namespace overem
