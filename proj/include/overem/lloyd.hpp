#pragma once

// Lloyd's algorithm around the simplex configuration: the radial factor of
// the population update, the population update itself (Monte Carlo over
// Voronoi cones), sample k-means, and the map from k-means centers to an EM
// starting point on the rotation orbit.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <vector>

#include "overem/engine.hpp"
#include "overem/errors.hpp"
#include "overem/mixture.hpp"
#include "overem/parallel.hpp"
#include "overem/sample_em.hpp"
#include "overem/simplex.hpp"

namespace overem {

/// R0(d) = ∫ρ^d e^{-ρ²/2} / ∫ρ^{d-1} e^{-ρ²/2} = √2 Γ((d+1)/2) / Γ(d/2), i.e. E‖Z‖.
inline double population_lloyd_radius(int d) {
  if (d < 1) throw DomainError("population_lloyd_radius: d must be >= 1");
  return std::sqrt(2.0) * std::exp(std::lgamma(0.5 * (d + 1)) - std::lgamma(0.5 * d));
}

struct LloydUpdate {
  Eigen::MatrixXd centers;   // d x k, updated centers
  Eigen::VectorXd cell_mass; // probability of each Voronoi cell
  double mean_radius = 0.0;
  double max_relative_move = 0.0;  // max_i ‖μ_i' - r v_i‖ / r
  double max_angle = 0.0;          // max_i angle(μ_i', v_i), radians
};

/// Population Lloyd step from centers r·v_i: conditional means of N(0, I) over
/// the cells {x : x·(v_i - v_j) >= 0 ∀ j}. Uses the engine's Monte Carlo sample
/// set (common random numbers), whatever the engine's integration mode.
inline LloydUpdate population_lloyd_update(const SimplexFrame& frame, double r, const ExpectationEngine& engine) {
  if (!(r > 0)) throw DomainError("population_lloyd_update: r must be positive");
  if (engine.mode() != EngineMode::monte_carlo)
    throw DomainError("population_lloyd_update needs a monte_carlo engine");
  if (engine.d() != frame.d()) throw DimensionError("engine was built for a different dimension");
  const int d = frame.d();
  const int k = frame.k();
  const RowMatrix& z = engine.samples();
  const Eigen::MatrixXd centers0 = r * frame.vertices();
  // acc[j*(d+1)] counts cell j, acc[j*(d+1)+1+a] sums coordinate a.
  const std::size_t stride = static_cast<std::size_t>(d + 1);
  auto totals = parallel::reduce(static_cast<std::size_t>(z.rows()), stride * k,
                                 [&](std::size_t i, std::span<double> acc) {
                                   const auto zi = z.row(static_cast<Eigen::Index>(i));
                                   int best = 0;
                                   double best_dist = std::numeric_limits<double>::infinity();
                                   for (int j = 0; j < k; ++j) {
                                     const double dist = (zi.transpose() - centers0.col(j)).squaredNorm();
                                     if (dist < best_dist) {
                                       best_dist = dist;
                                       best = j;
                                     }
                                   }
                                   double* cell = acc.data() + best * stride;
                                   cell[0] += 1.0;
                                   for (int a = 0; a < d; ++a) cell[1 + a] += zi[a];
                                 });
  LloydUpdate out;
  out.centers.resize(d, k);
  out.cell_mass.resize(k);
  const double n = static_cast<double>(z.rows());
  for (int j = 0; j < k; ++j) {
    const double* cell = totals.data() + j * stride;
    if (cell[0] == 0.0) throw DomainError("population_lloyd_update: empty Voronoi cell in the sample");
    for (int a = 0; a < d; ++a) out.centers(a, j) = cell[1 + a] / cell[0];
    out.cell_mass[j] = cell[0] / n;
    const double norm = out.centers.col(j).norm();
    out.mean_radius += norm / k;
    out.max_relative_move = std::max(out.max_relative_move, (out.centers.col(j) - centers0.col(j)).norm() / r);
    const double cosang = std::clamp(out.centers.col(j).dot(frame.vertices().col(j)) / norm, -1.0, 1.0);
    out.max_angle = std::max(out.max_angle, std::acos(cosang));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Sample k-means

struct LloydConfig {
  int k = 2;
  int d = 1;
  int max_iter = 300;
  double center_tol = 1e-6;
  /// d x k starting centers; empty means r·v_i with r = population_lloyd_radius(d).
  std::optional<Eigen::MatrixXd> init_centers;
};

struct KMeansResult {
  Eigen::MatrixXd centers;       // d x k
  std::vector<int> assignments;  // per data row
  std::vector<double> inertia;   // after each assignment step
  int iterations = 0;
  bool converged = false;
  int reseeded_clusters = 0;
};

inline KMeansResult run_sample_kmeans(const LloydConfig& config, const Dataset& data) {
  if (config.max_iter < 1) throw DomainError("LloydConfig.max_iter must be >= 1");
  if (!(config.center_tol > 0)) throw DomainError("LloydConfig.center_tol must be positive");
  if (config.k < 2) throw DomainError("LloydConfig.k must be >= 2");
  if (data.d() != config.d) throw DimensionError("dataset dimension does not match LloydConfig.d");
  if (data.n() < static_cast<std::size_t>(config.k)) throw DomainError("k-means needs at least k points");
  const RowMatrix& x = data.samples();
  const int k = config.k;
  const int d = config.d;
  const auto n = static_cast<Eigen::Index>(data.n());
  if (((x.rowwise() - x.row(0)).cwiseAbs().maxCoeff()) == 0.0)
    throw DomainError("k-means on degenerate data: all points identical");

  KMeansResult res;
  if (config.init_centers) {
    if (config.init_centers->rows() != d || config.init_centers->cols() != k)
      throw DimensionError("init_centers must be d x k");
    res.centers = *config.init_centers;
  } else {
    if (d < k - 1) throw DimensionError("simplex-seeded k-means needs d >= k - 1");
    res.centers = population_lloyd_radius(d) * build_simplex(k, d).vertices();
  }
  res.assignments.assign(static_cast<std::size_t>(n), 0);
  std::vector<double> dist(static_cast<std::size_t>(n));

  for (int it = 0; it < config.max_iter; ++it) {
    // Assignment step.
    parallel::for_each_task((static_cast<std::size_t>(n) + parallel::kBlockSize - 1) / parallel::kBlockSize,
                            [&](std::size_t b) {
                              const auto end = std::min<Eigen::Index>(n, static_cast<Eigen::Index>((b + 1) * parallel::kBlockSize));
                              for (auto i = static_cast<Eigen::Index>(b * parallel::kBlockSize); i < end; ++i) {
                                int best = 0;
                                double best_d = std::numeric_limits<double>::infinity();
                                for (int j = 0; j < k; ++j) {
                                  const double dd = (x.row(i).transpose() - res.centers.col(j)).squaredNorm();
                                  if (dd < best_d) {
                                    best_d = dd;
                                    best = j;
                                  }
                                }
                                res.assignments[static_cast<std::size_t>(i)] = best;
                                dist[static_cast<std::size_t>(i)] = best_d;
                              }
                            });
    // Empty clusters take the point farthest from its current center.
    std::vector<int> counts(static_cast<std::size_t>(k), 0);
    for (int a : res.assignments) ++counts[static_cast<std::size_t>(a)];
    for (int j = 0; j < k; ++j) {
      if (counts[static_cast<std::size_t>(j)] > 0) continue;
      Eigen::Index far = -1;
      for (Eigen::Index i = 0; i < n; ++i) {
        const auto ui = static_cast<std::size_t>(i);
        if (counts[static_cast<std::size_t>(res.assignments[ui])] > 1 &&
            (far < 0 || dist[ui] > dist[static_cast<std::size_t>(far)]))
          far = i;
      }
      if (far < 0) throw DomainError("k-means: cannot reseed an empty cluster");
      --counts[static_cast<std::size_t>(res.assignments[static_cast<std::size_t>(far)])];
      res.assignments[static_cast<std::size_t>(far)] = j;
      dist[static_cast<std::size_t>(far)] = 0.0;
      counts[static_cast<std::size_t>(j)] = 1;
      ++res.reseeded_clusters;
    }
    res.inertia.push_back(parallel::reduce(static_cast<std::size_t>(n), 1, [&](std::size_t i, std::span<double> acc) {
      acc[0] += (x.row(static_cast<Eigen::Index>(i)).transpose() - res.centers.col(res.assignments[i])).squaredNorm();
    })[0]);

    // Update step.
    const std::size_t stride = static_cast<std::size_t>(d + 1);
    auto totals = parallel::reduce(static_cast<std::size_t>(n), stride * k, [&](std::size_t i, std::span<double> acc) {
      double* cell = acc.data() + static_cast<std::size_t>(res.assignments[i]) * stride;
      cell[0] += 1.0;
      for (int a = 0; a < d; ++a) cell[1 + a] += x(static_cast<Eigen::Index>(i), a);
    });
    double max_move = 0.0;
    for (int j = 0; j < k; ++j) {
      const double* cell = totals.data() + static_cast<std::size_t>(j) * stride;
      Eigen::VectorXd c(d);
      for (int a = 0; a < d; ++a) c[a] = cell[1 + a] / cell[0];
      max_move = std::max(max_move, (c - res.centers.col(j)).norm());
      res.centers.col(j) = c;
    }
    res.iterations = it + 1;
    if (max_move <= config.center_tol) {
      res.converged = true;
      break;
    }
  }
  return res;
}

// ---------------------------------------------------------------------------
// Bridge from k-means centers to an EM starting point

struct OrbitFit {
  ThetaState theta;
  double residual = 0.0;  // sqrt of the least-squares objective
  int shift = 0;
  bool reversed = false;
};

/// Least-squares θ minimizing Σ_j ‖c_σ(j) - R^(j-1) θ‖² over the 2k cyclic
/// labelings σ(j) = shift ± j. For a fixed labeling the optimum is
/// θ = (1/k) Σ_j (R^(j-1))ᵀ c_σ(j) because R is orthogonal.
inline OrbitFit em_init_from_kmeans(const SimplexFrame& frame, const Eigen::MatrixXd& centers) {
  const int k = frame.k();
  if (centers.rows() != frame.d() || centers.cols() != k) throw DimensionError("centers must be d x k");
  OrbitFit best;
  best.residual = std::numeric_limits<double>::infinity();
  for (int dir = 0; dir < 2; ++dir) {
    for (int shift = 0; shift < k; ++shift) {
      auto label = [&](int j) { return dir == 0 ? (shift + j) % k : ((shift - j) % k + k) % k; };
      Eigen::VectorXd theta = Eigen::VectorXd::Zero(frame.d());
      for (int j = 0; j < k; ++j) theta += frame.power(j).transpose() * centers.col(label(j));
      theta /= k;
      double obj = 0.0;
      for (int j = 0; j < k; ++j) obj += (centers.col(label(j)) - frame.power(j) * theta).squaredNorm();
      const double resid = std::sqrt(obj);
      if (resid < best.residual - 1e-15) {
        best.residual = resid;
        best.theta = ThetaState(theta);
        best.shift = shift;
        best.reversed = dir == 1;
      }
    }
  }
  return best;
}

}  // namespace overem
