#pragma once

// Mixture weights, their discrete Fourier transform, and the per-point kernel
// shared by every EM variant: mixture log-density and responsibilities.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "overem/errors.hpp"
#include "overem/simplex.hpp"

namespace overem {

inline constexpr double kDefaultDftTol = 1e-12;

struct MixtureSpec {
  int k = 0;
  std::vector<double> weights;
  std::vector<double> log_weights;
  std::vector<std::complex<double>> weight_dft;
  double min_dft_mod = 0.0;  // min over l = 1..k-1 of |π̂(l)|
  double dft_tol = kDefaultDftTol;
  bool degenerate = false;
  bool renormalized = false;  // input sum was off by (1e-12, 1e-9]
};

namespace detail {

inline std::vector<double> normalized_weights(std::span<const double> weights, bool* renormalized) {
  if (weights.size() < 2) throw DomainError("mixture needs at least two weights");
  double sum = 0.0;
  for (double w : weights) {
    if (!std::isfinite(w) || !(w > 0.0)) throw DomainError("mixture weights must be positive");
    sum += w;
  }
  const double dev = std::abs(sum - 1.0);
  if (dev > 1e-9) throw DomainError("mixture weights must sum to 1");
  std::vector<double> out(weights.begin(), weights.end());
  if (renormalized) *renormalized = dev > 1e-12;
  if (dev > 1e-12)
    for (double& w : out) w /= sum;
  return out;
}

}  // namespace detail

/// π̂(l) = Σ_j π_{j+1} exp(i 2π l j / k), l = 0..k-1, by direct summation.
inline std::vector<std::complex<double>> weight_dft(std::span<const double> weights) {
  std::vector<double> w = detail::normalized_weights(weights, nullptr);
  const std::size_t k = w.size();
  std::vector<std::complex<double>> out(k);
  for (std::size_t l = 0; l < k; ++l) {
    std::complex<double> acc{0.0, 0.0};
    for (std::size_t j = 0; j < k; ++j) {
      // Reduce l*j mod k first so the angle stays in [0, 2π).
      const double angle = 2.0 * std::numbers::pi * static_cast<double>((l * j) % k) /
                           static_cast<double>(k);
      acc += w[j] * std::polar(1.0, angle);
    }
    out[l] = acc;
  }
  return out;
}

inline MixtureSpec make_mixture(std::span<const double> weights, double dft_tol = kDefaultDftTol) {
  MixtureSpec spec;
  spec.weights = detail::normalized_weights(weights, &spec.renormalized);
  spec.k = static_cast<int>(spec.weights.size());
  spec.dft_tol = dft_tol;
  for (double w : spec.weights) spec.log_weights.push_back(std::log(w));
  spec.weight_dft = weight_dft(spec.weights);
  spec.min_dft_mod = std::abs(spec.weight_dft[1]);
  for (int l = 2; l < spec.k; ++l) spec.min_dft_mod = std::min(spec.min_dft_mod, std::abs(spec.weight_dft[l]));
  spec.degenerate = spec.min_dft_mod <= dft_tol;
  return spec;
}

inline MixtureSpec make_mixture(std::initializer_list<double> weights, double dft_tol = kDefaultDftTol) {
  return make_mixture(std::span<const double>(weights.begin(), weights.size()), dft_tol);
}

/// Location parameter with its cached Euclidean norm.
class ThetaState {
 public:
  ThetaState() = default;
  explicit ThetaState(Eigen::VectorXd theta) : theta_(std::move(theta)), norm_(theta_.norm()) {}

  const Eigen::VectorXd& theta() const { return theta_; }
  double norm() const { return norm_; }
  int dim() const { return static_cast<int>(theta_.size()); }

 private:
  Eigen::VectorXd theta_;
  double norm_ = 0.0;
};

/// Component means R^(j-1) θ as the columns of a d x k matrix.
inline Eigen::MatrixXd component_means(const SimplexFrame& frame, const Eigen::VectorXd& theta) {
  if (theta.size() != frame.d()) throw DimensionError("theta has wrong dimension");
  Eigen::MatrixXd means(frame.d(), frame.k());
  for (int j = 0; j < frame.k(); ++j) means.col(j) = frame.power(j) * theta;
  return means;
}

namespace detail {

inline void check_compatible(const SimplexFrame& frame, const MixtureSpec& spec) {
  if (spec.k != frame.k()) throw DimensionError("mixture and frame disagree on k");
}

/// Log-space evaluation of Σ_j π_j exp(s_j) for one point.
///
/// With m = max_j s_j and e_j = exp(s_j - m), the sum equals
/// exp(m) (S + Σ_j π_j expm1(s_j - m)) with S = Σ_j π_j, which keeps full
/// relative accuracy when every s_j is tiny.
struct ExpSumKernel {
  double shift = 0.0;   // m
  double excess = 0.0;  // Σ_j π_j expm1(s_j - m)

  template <class Scores>
  static ExpSumKernel eval(const MixtureSpec& spec, const Scores& s) {
    ExpSumKernel out;
    out.shift = s[0];
    for (int j = 1; j < spec.k; ++j) out.shift = std::max(out.shift, static_cast<double>(s[j]));
    for (int j = 0; j < spec.k; ++j) out.excess += spec.weights[j] * std::expm1(s[j] - out.shift);
    return out;
  }

  /// log Σ_j π_j exp(s_j) - log Σ_j π_j, given weight_sum_m1 = Σπ - 1.
  double log_ratio(double weight_sum_m1) const {
    return shift + std::log1p(weight_sum_m1 + excess) - std::log1p(weight_sum_m1);
  }
  double log_sum(double weight_sum_m1) const { return shift + std::log1p(weight_sum_m1 + excess); }
  double denominator(double weight_sum) const { return weight_sum + excess; }
};

inline double weight_sum(const MixtureSpec& spec) {
  double s = 0.0;
  for (double w : spec.weights) s += w;
  return s;
}

inline void check_finite(const Eigen::VectorXd& x, const char* what) {
  if (!x.allFinite()) throw DomainError(std::string(what) + " contains non-finite values");
}

}  // namespace detail

/// log f(x; θ) = -(d/2) log 2π - (‖x‖² + ‖θ‖²)/2 + log Σ_j π_j exp((R^(j-1)θ)ᵀx).
inline double log_density(const SimplexFrame& frame, const MixtureSpec& spec, const ThetaState& theta,
                          const Eigen::VectorXd& x) {
  detail::check_compatible(frame, spec);
  if (x.size() != frame.d()) throw DimensionError("x has wrong dimension");
  detail::check_finite(x, "x");
  detail::check_finite(theta.theta(), "theta");
  const Eigen::VectorXd scores = component_means(frame, theta.theta()).transpose() * x;
  const double sum = detail::weight_sum(spec);
  const auto kernel = detail::ExpSumKernel::eval(spec, scores);
  const double d = frame.d();
  return -0.5 * d * std::log(2.0 * std::numbers::pi) -
         0.5 * (x.squaredNorm() + theta.norm() * theta.norm()) + kernel.log_sum(sum - 1.0);
}

/// Posterior component probabilities w_j(x; θ).
inline Eigen::VectorXd responsibilities(const SimplexFrame& frame, const MixtureSpec& spec,
                                        const ThetaState& theta, const Eigen::VectorXd& x) {
  detail::check_compatible(frame, spec);
  if (x.size() != frame.d()) throw DimensionError("x has wrong dimension");
  detail::check_finite(x, "x");
  detail::check_finite(theta.theta(), "theta");
  const Eigen::VectorXd scores = component_means(frame, theta.theta()).transpose() * x;
  const auto kernel = detail::ExpSumKernel::eval(spec, scores);
  const double denom = kernel.denominator(detail::weight_sum(spec));
  Eigen::VectorXd w(spec.k);
  for (int j = 0; j < spec.k; ++j) w[j] = spec.weights[j] * std::exp(scores[j] - kernel.shift) / denom;
  return w;
}

}  // namespace overem
