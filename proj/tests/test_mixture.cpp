#include <gtest/gtest.h>

#include <cmath>
#include <complex>
#include <numbers>
#include <random>
#include <vector>

#include "overem/errors.hpp"
#include "overem/mixture.hpp"
#include "overem/simplex.hpp"

using namespace overem;

namespace {

// Plain density sum, no log-sum-exp tricks.
double oracle_density(const SimplexFrame& f, const std::vector<double>& w, const Eigen::VectorXd& theta,
                      const Eigen::VectorXd& x) {
  const double d = f.d();
  double total = 0.0;
  for (int j = 0; j < f.k(); ++j) {
    const Eigen::VectorXd mu = f.power(j) * theta;
    total += w[static_cast<std::size_t>(j)] * std::exp(-0.5 * (x - mu).squaredNorm());
  }
  return total / std::pow(2.0 * std::numbers::pi, d / 2.0);
}

std::vector<double> random_weights(std::mt19937_64& gen, int k) {
  std::uniform_real_distribution<double> u(0.05, 1.0);
  std::vector<double> w(static_cast<std::size_t>(k));
  double s = 0.0;
  for (auto& x : w) s += (x = u(gen));
  for (auto& x : w) x /= s;
  return w;
}

}  // namespace

TEST(Mixture, TwoComponentDft) {
  const auto spec = make_mixture({0.7, 0.3});
  EXPECT_NEAR(spec.weight_dft[0].real(), 1.0, 1e-15);
  EXPECT_NEAR(spec.weight_dft[1].real(), 0.4, 1e-15);
  EXPECT_NEAR(spec.weight_dft[1].imag(), 0.0, 1e-15);
  EXPECT_FALSE(spec.degenerate);
}

TEST(Mixture, ThreeComponentDftModulus) {
  // |0.5 + 0.3 w + 0.2 w^2|^2 with w = exp(2 pi i / 3) is 0.07 for both l = 1, 2.
  const auto spec = make_mixture({0.5, 0.3, 0.2});
  EXPECT_NEAR(std::norm(spec.weight_dft[1]), 0.07, 1e-14);
  EXPECT_NEAR(std::norm(spec.weight_dft[2]), 0.07, 1e-14);
  EXPECT_NEAR(spec.min_dft_mod, std::sqrt(0.07), 1e-14);
}

TEST(Mixture, DftMatchesNaiveExponentials) {
  std::mt19937_64 gen(11);
  for (int k = 2; k <= 9; ++k) {
    const auto w = random_weights(gen, k);
    const auto dft = weight_dft(w);
    for (int l = 0; l < k; ++l) {
      std::complex<double> acc = 0.0;
      for (int j = 0; j < k; ++j)
        acc += w[static_cast<std::size_t>(j)] * std::exp(std::complex<double>(0.0, 2.0 * std::numbers::pi * l * j / k));
      EXPECT_LT(std::abs(acc - dft[static_cast<std::size_t>(l)]), 1e-13);
    }
  }
}

TEST(Mixture, UniformWeightsAreDegenerate) {
  for (int k = 2; k <= 6; ++k) {
    const std::vector<double> w(static_cast<std::size_t>(k), 1.0 / k);
    EXPECT_TRUE(make_mixture(w).degenerate) << "k=" << k;
  }
  // Period-2 pattern on k = 4 kills l = 1 and l = 3 but not l = 2.
  EXPECT_TRUE(make_mixture({0.3, 0.2, 0.3, 0.2}).degenerate);
  EXPECT_FALSE(make_mixture({0.4, 0.3, 0.2, 0.1}).degenerate);
}

TEST(Mixture, WeightValidation) {
  EXPECT_THROW((void)make_mixture({1.0}), DomainError);
  EXPECT_THROW((void)make_mixture({0.7, 0.0, 0.3}), DomainError);
  EXPECT_THROW((void)make_mixture({1.2, -0.2}), DomainError);
  EXPECT_THROW((void)make_mixture({0.7, 0.4}), DomainError);
  EXPECT_THROW((void)make_mixture({0.7, std::nan("")}), DomainError);
  const auto tiny = make_mixture({0.7 + 5e-10, 0.3});
  EXPECT_TRUE(tiny.renormalized);
  EXPECT_NEAR(tiny.weights[0] + tiny.weights[1], 1.0, 1e-15);
  EXPECT_FALSE(make_mixture({0.7, 0.3}).renormalized);
}

TEST(Mixture, LogDensityMatchesOracle) {
  std::mt19937_64 gen(5);
  std::normal_distribution<double> normal;
  for (auto [k, d] : {std::pair{2, 1}, std::pair{3, 2}, std::pair{4, 5}}) {
    const auto f = build_simplex(k, d);
    const auto w = random_weights(gen, k);
    const auto spec = make_mixture(w);
    for (int rep = 0; rep < 20; ++rep) {
      Eigen::VectorXd theta(d), x(d);
      for (int a = 0; a < d; ++a) theta[a] = 0.7 * normal(gen), x[a] = 1.5 * normal(gen);
      const double got = log_density(f, spec, ThetaState(theta), x);
      EXPECT_NEAR(got, std::log(oracle_density(f, w, theta, x)), 1e-12 * (1.0 + std::abs(got)));
    }
  }
}

TEST(Mixture, LogDensityStableFarOut) {
  const auto f = build_simplex(2, 1);
  const auto spec = make_mixture({0.7, 0.3});
  Eigen::VectorXd theta(1), x(1);
  theta << 30.0;
  x << 40.0;
  // The +θ component dominates: log(0.7) + log φ(x - θ).
  const double expected = std::log(0.7) - 0.5 * std::log(2.0 * std::numbers::pi) - 50.0;
  EXPECT_NEAR(log_density(f, spec, ThetaState(theta), x), expected, 1e-9);
}

TEST(Mixture, ResponsibilitiesAreProbabilities) {
  const auto f = build_simplex(3, 2);
  const auto spec = make_mixture({0.5, 0.3, 0.2});
  std::mt19937_64 gen(2);
  std::normal_distribution<double> normal;
  for (int rep = 0; rep < 50; ++rep) {
    Eigen::VectorXd theta(2), x(2);
    theta << normal(gen), normal(gen);
    x << 3 * normal(gen), 3 * normal(gen);
    const auto w = responsibilities(f, spec, ThetaState(theta), x);
    EXPECT_NEAR(w.sum(), 1.0, 1e-14);
    EXPECT_GE(w.minCoeff(), 0.0);
    // Bayes rule against the oracle.
    for (int j = 0; j < 3; ++j) {
      const Eigen::VectorXd mu = f.power(j) * theta;
      const double num = spec.weights[static_cast<std::size_t>(j)] * std::exp(-0.5 * (x - mu).squaredNorm()) /
                         (2.0 * std::numbers::pi);
      EXPECT_NEAR(w[j], num / oracle_density(f, spec.weights, theta, x), 1e-12);
    }
  }
}

TEST(Mixture, ResponsibilitiesAtZeroAreWeights) {
  const auto f = build_simplex(4, 3);
  const auto spec = make_mixture({0.4, 0.3, 0.2, 0.1});
  const auto w = responsibilities(f, spec, ThetaState(Eigen::VectorXd::Zero(3)), Eigen::Vector3d(1.0, -2.0, 0.5));
  for (int j = 0; j < 4; ++j) EXPECT_DOUBLE_EQ(w[j], spec.weights[static_cast<std::size_t>(j)]);
}

TEST(Mixture, ShapeAndFinitenessChecks) {
  const auto f = build_simplex(3, 2);
  const auto spec2 = make_mixture({0.7, 0.3});
  const auto spec3 = make_mixture({0.5, 0.3, 0.2});
  const ThetaState theta(Eigen::Vector2d(0.1, 0.2));
  EXPECT_THROW((void)log_density(f, spec2, theta, Eigen::Vector2d(0, 0)), DimensionError);
  EXPECT_THROW((void)log_density(f, spec3, theta, Eigen::Vector3d(0, 0, 0)), DimensionError);
  EXPECT_THROW((void)log_density(f, spec3, theta, Eigen::Vector2d(std::nan(""), 0)), DomainError);
  EXPECT_THROW((void)responsibilities(f, spec3, ThetaState(Eigen::Vector3d(0, 0, 0)), Eigen::Vector2d(0, 0)),
               DimensionError);
}

TEST(Mixture, ThetaStateCachesNorm) {
  const ThetaState t(Eigen::Vector3d(3.0, 4.0, 0.0));
  EXPECT_DOUBLE_EQ(t.norm(), 5.0);
  EXPECT_EQ(t.dim(), 3);
  const auto means = component_means(build_simplex(2, 3), t.theta());
  EXPECT_EQ(means.cols(), 2);
  EXPECT_DOUBLE_EQ(means(0, 1), -3.0);
}
