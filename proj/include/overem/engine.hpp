#pragma once

// Expectations under Z ~ N(0, I_d).
//
// Gauss-Hermite mode integrates on the (k-1)-dimensional simplex subspace only.
// Every integrand depends on Z through s_j = (R^(j-1) θ)ᵀ Z; writing
// θ = θ_s + θ_c and Z = U y + Z_c, with R fixing the complement, gives
// s_j = (Uᵀ R^(j-1) θ_s)ᵀ y + θ_cᵀ Z_c. The shared term cancels in the
// responsibilities, contributes zero mean to the log-sum, and the complement
// part of the EM update has zero mean, so the complement is handled exactly.
//
// Monte Carlo mode draws one N(0, I_d) sample set per engine and reuses it for
// every θ (common random numbers).

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "overem/errors.hpp"
#include "overem/mixture.hpp"
#include "overem/parallel.hpp"
#include "overem/quadrature.hpp"
#include "overem/rng.hpp"
#include "overem/sampling.hpp"
#include "overem/simplex.hpp"

namespace overem {

enum class EngineMode { gauss_hermite, monte_carlo };

inline constexpr int kMaxQuadratureDim = 4;
inline constexpr double kQuadratureNoiseFloor = 1e-12;

struct EngineConfig {
  EngineMode mode = EngineMode::gauss_hermite;
  int gh_nodes_per_axis = 40;
  std::size_t mc_samples = 2'000'000;
  std::uint64_t seed = 0;

  static EngineConfig gauss_hermite(int nodes = 40) {
    EngineConfig c;
    c.gh_nodes_per_axis = nodes;
    return c;
  }
  static EngineConfig monte_carlo(std::size_t samples = 2'000'000, std::uint64_t seed = 0) {
    EngineConfig c;
    c.mode = EngineMode::monte_carlo;
    c.mc_samples = samples;
    c.seed = seed;
    return c;
  }
  /// Quadrature while the simplex subspace has at most four dimensions, MC otherwise.
  static EngineConfig automatic(int k, std::uint64_t seed = 0) {
    return k - 1 <= kMaxQuadratureDim ? gauss_hermite() : monte_carlo(2'000'000, seed);
  }
};

/// Which N(0, I) expectation to evaluate.
enum class Integrand {
  em_update,      // Σ_j w_j(Z; θ) (R^(j-1))ᵀ Z
  neg_log_lik,    // -log f(Z; θ)
  grad_norm_sq,   // ‖θ - M(θ)‖², derived from em_update
  kl_divergence,  // log f(Z; 0) - log f(Z; θ), the CRN difference
};

struct Estimate {
  Eigen::VectorXd value;
  Eigen::VectorXd std_error;  // zero in quadrature mode

  double scalar() const { return value[0]; }
  double scalar_error() const { return std_error[0]; }
};

class ExpectationEngine {
 public:
  ExpectationEngine(EngineConfig config, const SimplexFrame& frame)
      : config_(config), d_(frame.d()), k_(frame.k()) {
    if (config_.mode == EngineMode::gauss_hermite) {
      effective_dim_ = frame.k() - 1;
      if (effective_dim_ > kMaxQuadratureDim)
        throw DomainError("gauss_hermite engine supports at most " + std::to_string(kMaxQuadratureDim) +
                          " integrated dimensions; use monte_carlo");
      if (config_.gh_nodes_per_axis < 2) throw DomainError("gauss_hermite engine needs >= 2 nodes per axis");
      basis_ = frame.subspace_basis();
      const Eigen::MatrixXd complement =
          Eigen::MatrixXd::Identity(d_, d_) - basis_ * basis_.transpose();
      if ((frame.rotation() * complement - complement).cwiseAbs().maxCoeff() > 1e-10)
        throw DomainError("gauss_hermite reduction requires R to fix the simplex complement");
      rule_ = gauss_hermite_rule(config_.gh_nodes_per_axis);
      grid_size_ = 1;
      for (int i = 0; i < effective_dim_; ++i) grid_size_ *= rule_.nodes.size();
    } else {
      if (config_.mc_samples < 2) throw DomainError("monte_carlo engine needs >= 2 samples");
      effective_dim_ = d_;
      samples_ = standard_normal_rows(config_.mc_samples, d_, rng::derive_seed(config_.seed, "engine-mc"));
    }
  }

  const EngineConfig& config() const { return config_; }
  EngineMode mode() const { return config_.mode; }
  int d() const { return d_; }
  int k() const { return k_; }
  int effective_dim() const { return effective_dim_; }
  std::size_t grid_size() const { return grid_size_; }
  const GaussHermiteRule& rule() const { return rule_; }
  const RowMatrix& samples() const { return samples_; }
  const Eigen::MatrixXd& basis() const { return basis_; }

  std::string fingerprint() const {
    std::ostringstream os;
    if (config_.mode == EngineMode::gauss_hermite)
      os << "gh(nodes=" << config_.gh_nodes_per_axis << ",dim=" << effective_dim_ << ")";
    else
      os << "mc(samples=" << config_.mc_samples << ",seed=" << config_.seed << ",d=" << d_ << ")";
    return os.str();
  }

  /// Magnitude below which a KL value is indistinguishable from engine error.
  double kl_noise_floor(double kl_std_error) const {
    return config_.mode == EngineMode::gauss_hermite ? kQuadratureNoiseFloor : 3.0 * kl_std_error;
  }

 private:
  EngineConfig config_;
  int d_;
  int k_;
  int effective_dim_ = 0;
  GaussHermiteRule rule_;
  std::size_t grid_size_ = 0;
  Eigen::MatrixXd basis_;
  RowMatrix samples_;
};

namespace detail {

inline void check_engine(const ExpectationEngine& engine, const SimplexFrame& frame, const MixtureSpec& spec,
                         const Eigen::VectorXd& theta) {
  check_compatible(frame, spec);
  if (engine.d() != frame.d() || engine.k() != frame.k())
    throw DimensionError("engine was built for a different frame");
  if (theta.size() != frame.d()) throw DimensionError("theta has wrong dimension");
  check_finite(theta, "theta");
}

// Decodes a flat grid index into per-axis node indices (mixed radix).
inline void grid_point(const GaussHermiteRule& rule, std::size_t index, int dim, double* y, double* weight) {
  const std::size_t n = rule.nodes.size();
  double w = 1.0;
  for (int a = 0; a < dim; ++a) {
    std::size_t i = index % n;
    index /= n;
    y[a] = rule.nodes[i];
    w *= rule.weights[i];
  }
  *weight = w;
}

inline Estimate quadrature_expect(const ExpectationEngine& engine, const SimplexFrame& frame,
                                  const MixtureSpec& spec, const Eigen::VectorXd& theta, Integrand what) {
  const int d = frame.d();
  const int k = frame.k();
  const int m = engine.effective_dim();
  const Eigen::MatrixXd& basis = engine.basis();
  const Eigen::VectorXd theta_sub = basis.transpose() * theta;
  const double sum = weight_sum(spec);
  const double theta_sq = theta.squaredNorm();

  Estimate out;
  const bool is_vector = what == Integrand::em_update;
  out.value = Eigen::VectorXd::Zero(is_vector ? d : 1);
  out.std_error = Eigen::VectorXd::Zero(is_vector ? d : 1);

  // Scores s_j = b_jᵀ y with b_j = Uᵀ R^(j-1) θ (depends only on θ_s).
  Eigen::MatrixXd b(m, k);
  for (int j = 0; j < k; ++j) b.col(j) = basis.transpose() * (frame.power(j) * (basis * theta_sub));

  if (theta_sub.squaredNorm() == 0.0) {
    // Responsibilities are constant: M = 0 and the log-sum is log Σπ.
    if (what == Integrand::neg_log_lik)
      out.value[0] = 0.5 * d * std::log(2.0 * std::numbers::pi) + 0.5 * (d + theta_sq) - std::log1p(sum - 1.0);
    else if (what == Integrand::kl_divergence)
      out.value[0] = 0.5 * theta_sq;
    return out;
  }

  const std::size_t width = is_vector ? static_cast<std::size_t>(k * m) : 1;
  const auto& rule = engine.rule();
  auto totals = parallel::reduce(engine.grid_size(), width, [&](std::size_t idx, std::span<double> acc) {
    double y[kMaxQuadratureDim];
    double weight;
    grid_point(rule, idx, m, y, &weight);
    double s[64];
    for (int j = 0; j < k; ++j) {
      double v = 0.0;
      for (int a = 0; a < m; ++a) v += b(a, j) * y[a];
      s[j] = v;
    }
    const auto kernel = ExpSumKernel::eval(spec, s);
    switch (what) {
      case Integrand::em_update: {
        const double denom = kernel.denominator(sum);
        for (int j = 0; j < k; ++j) {
          const double wj = weight * spec.weights[j] * std::exp(s[j] - kernel.shift) / denom;
          for (int a = 0; a < m; ++a) acc[static_cast<std::size_t>(j * m + a)] += wj * y[a];
        }
        break;
      }
      case Integrand::neg_log_lik:
        acc[0] += weight * kernel.log_sum(sum - 1.0);
        break;
      default:
        acc[0] += weight * kernel.log_ratio(sum - 1.0);
        break;
    }
  });

  if (is_vector) {
    for (int j = 0; j < k; ++j) {
      Eigen::Map<const Eigen::VectorXd> ewy(totals.data() + j * m, m);
      out.value += frame.power(j).transpose() * (basis * ewy);
    }
  } else if (what == Integrand::neg_log_lik) {
    out.value[0] = 0.5 * d * std::log(2.0 * std::numbers::pi) + 0.5 * (d + theta_sq) - totals[0];
  } else {
    out.value[0] = 0.5 * theta_sq - totals[0];
  }
  return out;
}

inline Estimate monte_carlo_expect(const ExpectationEngine& engine, const SimplexFrame& frame,
                                   const MixtureSpec& spec, const Eigen::VectorXd& theta, Integrand what) {
  const int d = frame.d();
  const int k = frame.k();
  const RowMatrix& z = engine.samples();
  const std::size_t n = static_cast<std::size_t>(z.rows());
  const Eigen::MatrixXd means = component_means(frame, theta);
  const double sum = weight_sum(spec);
  const double theta_sq = theta.squaredNorm();
  const double log_norm = 0.5 * d * std::log(2.0 * std::numbers::pi);
  const bool is_vector = what == Integrand::em_update;
  const std::size_t dim = is_vector ? static_cast<std::size_t>(d) : 1;

  std::vector<Eigen::MatrixXd> rot_t;
  if (is_vector)
    for (int j = 0; j < k; ++j) rot_t.push_back(frame.power(j).transpose());

  // Accumulates first and second moments of the per-sample integrand.
  auto totals = parallel::reduce(n, 2 * dim, [&](std::size_t i, std::span<double> acc) {
    Eigen::Map<const Eigen::VectorXd> zi(z.data() + i * static_cast<std::size_t>(d), d);
    const Eigen::VectorXd s = means.transpose() * zi;
    const auto kernel = ExpSumKernel::eval(spec, s);
    if (is_vector) {
      const double denom = kernel.denominator(sum);
      Eigen::VectorXd g = Eigen::VectorXd::Zero(d);
      for (int j = 0; j < k; ++j)
        g += (spec.weights[j] * std::exp(s[j] - kernel.shift) / denom) * (rot_t[j] * zi);
      for (int a = 0; a < d; ++a) {
        acc[a] += g[a];
        acc[dim + a] += g[a] * g[a];
      }
    } else {
      double v;
      if (what == Integrand::neg_log_lik)
        v = log_norm + 0.5 * (zi.squaredNorm() + theta_sq) - kernel.log_sum(sum - 1.0);
      else
        v = 0.5 * theta_sq - kernel.log_ratio(sum - 1.0);
      acc[0] += v;
      acc[1] += v * v;
    }
  });

  Estimate out;
  out.value.resize(static_cast<Eigen::Index>(dim));
  out.std_error.resize(static_cast<Eigen::Index>(dim));
  const double nn = static_cast<double>(n);
  for (std::size_t a = 0; a < dim; ++a) {
    const double mean = totals[a] / nn;
    const double var = std::max(0.0, (totals[dim + a] - nn * mean * mean) / (nn - 1.0));
    out.value[static_cast<Eigen::Index>(a)] = mean;
    out.std_error[static_cast<Eigen::Index>(a)] = std::sqrt(var / nn);
  }
  return out;
}

}  // namespace detail

/// N(0, I) expectation of the named integrand at θ.
inline Estimate expect(const ExpectationEngine& engine, const SimplexFrame& frame, const MixtureSpec& spec,
                       const Eigen::VectorXd& theta, Integrand what) {
  detail::check_engine(engine, frame, spec, theta);
  if (frame.k() > 64) throw DomainError("expect: k > 64 is not supported");
  if (what == Integrand::grad_norm_sq) {
    Estimate m = expect(engine, frame, spec, theta, Integrand::em_update);
    const Eigen::VectorXd grad = theta - m.value;
    Estimate out;
    out.value = Eigen::VectorXd::Constant(1, grad.squaredNorm());
    out.std_error = Eigen::VectorXd::Constant(1, 2.0 * grad.norm() * m.std_error.norm());
    return out;
  }
  return engine.mode() == EngineMode::gauss_hermite
             ? detail::quadrature_expect(engine, frame, spec, theta, what)
             : detail::monte_carlo_expect(engine, frame, spec, theta, what);
}

}  // namespace overem
