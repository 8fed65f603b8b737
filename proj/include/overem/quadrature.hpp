#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <vector>

#include "overem/errors.hpp"

namespace overem {

/// Gauss-Hermite rule for E[f(Y)], Y ~ N(0, 1): nodes are the roots of the
/// probabilists' Hermite polynomial He_n, weights sum to one.
struct GaussHermiteRule {
  std::vector<double> nodes;
  std::vector<double> weights;
};

namespace detail {

// Orthonormal probabilists' Hermite values p_{n-1}(x), p_n(x) where
// p_n = He_n / sqrt(n!).
inline std::pair<double, double> orthonormal_hermite(int n, double x) {
  double prev = 0.0;
  double cur = 1.0;
  for (int j = 0; j < n; ++j) {
    double next = (x * cur - std::sqrt(static_cast<double>(j)) * prev) / std::sqrt(static_cast<double>(j + 1));
    prev = cur;
    cur = next;
  }
  return {prev, cur};
}

}  // namespace detail

/// Golub-Welsch for the initial nodes, then Newton polishing on p_n.
/// Weights use w_i = 1 / (n p_{n-1}(x_i)^2).
inline GaussHermiteRule gauss_hermite_rule(int n) {
  if (n < 1) throw DomainError("gauss_hermite_rule: need at least one node");
  Eigen::MatrixXd jacobi = Eigen::MatrixXd::Zero(n, n);
  for (int i = 1; i < n; ++i) jacobi(i, i - 1) = jacobi(i - 1, i) = std::sqrt(static_cast<double>(i));
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(jacobi, Eigen::EigenvaluesOnly);
  GaussHermiteRule rule;
  rule.nodes.resize(static_cast<std::size_t>(n));
  rule.weights.resize(static_cast<std::size_t>(n));
  const double sqrt_n = std::sqrt(static_cast<double>(n));
  for (int i = 0; i < n; ++i) {
    double x = eig.eigenvalues()[i];
    for (int it = 0; it < 4; ++it) {
      auto [pm1, p] = detail::orthonormal_hermite(n, x);
      if (pm1 == 0.0) break;
      x -= p / (sqrt_n * pm1);  // p_n' = sqrt(n) p_{n-1}
    }
    auto [pm1, p] = detail::orthonormal_hermite(n, x);
    (void)p;
    rule.nodes[i] = x;
    rule.weights[i] = 1.0 / (static_cast<double>(n) * pm1 * pm1);
  }
  // Symmetrize so odd moments vanish to rounding.
  for (int i = 0; i < n / 2; ++i) {
    const int j = n - 1 - i;
    const double x = 0.5 * (rule.nodes[j] - rule.nodes[i]);
    const double w = 0.5 * (rule.weights[i] + rule.weights[j]);
    rule.nodes[i] = -x;
    rule.nodes[j] = x;
    rule.weights[i] = rule.weights[j] = w;
  }
  if (n % 2 == 1) rule.nodes[n / 2] = 0.0;
  return rule;
}

}  // namespace overem
