#pragma once

// Regular-simplex frames: k unit vertices in R^d and an orthogonal matrix R
// that maps vertex i to vertex i+1 (cyclically).

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "overem/errors.hpp"

namespace overem {

/// Immutable simplex geometry. Vertices are the columns of a d x k matrix.
class SimplexFrame {
 public:
  SimplexFrame(int k, int d, Eigen::MatrixXd vertices, Eigen::MatrixXd rotation)
      : k_(k), d_(d), vertices_(std::move(vertices)), rotation_(std::move(rotation)) {
    if (k < 2) throw DomainError("simplex frame needs k >= 2");
    if (d < k - 1) throw DimensionError("simplex frame needs d >= k - 1");
    if (vertices_.rows() != d || vertices_.cols() != k)
      throw DimensionError("vertex matrix must be d x k");
    if (rotation_.rows() != d || rotation_.cols() != d)
      throw DimensionError("rotation must be d x d");
    powers_.reserve(static_cast<std::size_t>(k));
    powers_.push_back(Eigen::MatrixXd::Identity(d, d));
    for (int j = 1; j < k; ++j) powers_.push_back(rotation_ * powers_.back());

    // Orthonormal basis of span(vertices); the simplex spans k - 1 dimensions.
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(vertices_);
    Eigen::MatrixXd q = qr.householderQ();
    basis_ = q.leftCols(k - 1);
  }

  int k() const { return k_; }
  int d() const { return d_; }
  const Eigen::MatrixXd& vertices() const { return vertices_; }
  Eigen::VectorXd vertex(int i) const { return vertices_.col(i); }
  const Eigen::MatrixXd& rotation() const { return rotation_; }

  /// R^j for j in [0, k); cached at construction.
  const Eigen::MatrixXd& power(int j) const {
    if (j < 0 || j >= k_) throw DimensionError("rotation power index out of range");
    return powers_[static_cast<std::size_t>(j)];
  }

  /// d x (k-1) orthonormal basis of the simplex subspace.
  const Eigen::MatrixXd& subspace_basis() const { return basis_; }

 private:
  int k_;
  int d_;
  Eigen::MatrixXd vertices_;
  Eigen::MatrixXd rotation_;
  std::vector<Eigen::MatrixXd> powers_;
  Eigen::MatrixXd basis_;
};

namespace detail {

// Unit regular simplex with `count` vertices in R^(count-1), built recursively:
// the first vertex is e1, the rest share first coordinate -1/(count-1) and form
// a smaller simplex in the orthogonal complement of e1.
inline Eigen::MatrixXd recursive_simplex(int count) {
  const int dim = count - 1;
  Eigen::MatrixXd v = Eigen::MatrixXd::Zero(dim, count);
  if (count == 2) {
    v(0, 0) = 1.0;
    v(0, 1) = -1.0;
    return v;
  }
  const double c = -1.0 / static_cast<double>(dim);
  const double scale = std::sqrt(1.0 - c * c);
  v(0, 0) = 1.0;
  Eigen::MatrixXd inner = recursive_simplex(count - 1);
  for (int i = 1; i < count; ++i) {
    v(0, i) = c;
    v.block(1, i, dim - 1, 1) = scale * inner.col(i - 1);
  }
  return v;
}

}  // namespace detail

/// Regular simplex with k vertices embedded in R^d by zero padding, plus the
/// cyclic rotation. On the simplex subspace R = ((k-1)/k) sum_i v_{i+1} v_i^T
/// (the frame is tight: sum_i v_i v_i^T = k/(k-1) I); R is the identity on the
/// orthogonal complement.
inline SimplexFrame build_simplex(int k, int d) {
  if (k < 2) throw DomainError("build_simplex: k must be >= 2");
  if (d < k - 1) throw DimensionError("build_simplex: d must be >= k - 1");
  const int m = k - 1;
  Eigen::MatrixXd core = detail::recursive_simplex(k);
  Eigen::MatrixXd rot_core = Eigen::MatrixXd::Zero(m, m);
  for (int i = 0; i < k; ++i) rot_core += core.col((i + 1) % k) * core.col(i).transpose();
  rot_core *= static_cast<double>(m) / static_cast<double>(k);

  Eigen::MatrixXd vertices = Eigen::MatrixXd::Zero(d, k);
  vertices.topRows(m) = core;
  Eigen::MatrixXd rotation = Eigen::MatrixXd::Identity(d, d);
  rotation.topLeftCorner(m, m) = rot_core;
  return SimplexFrame(k, d, std::move(vertices), std::move(rotation));
}

/// R^(j-1) theta for a 1-based component index j.
inline Eigen::VectorXd mean_of_component(const SimplexFrame& frame, const Eigen::VectorXd& theta,
                                         int j) {
  if (j < 1 || j > frame.k()) throw DimensionError("component index out of range");
  if (theta.size() != frame.d()) throw DimensionError("theta has wrong dimension");
  return frame.power(j - 1) * theta;
}

struct FrameReport {
  double unit_norm = 0.0;      // max |‖v_i‖ - 1|
  double vertex_sum = 0.0;     // ‖Σ v_i‖
  double inner_product = 0.0;  // max |v_i·v_j + 1/(k-1)|
  double cyclic_shift = 0.0;   // max ‖R v_i - v_{i+1}‖
  double orthogonality = 0.0;  // max |RᵀR - I|
  double period = 0.0;         // max |R^k - I|
  double tolerance = 0.0;
  bool pass = false;

  /// Name of the first violated invariant, or empty when all hold.
  std::string first_failure() const {
    const std::pair<const char*, double> checks[] = {
        {"unit_norm", unit_norm},         {"vertex_sum", vertex_sum},
        {"inner_product", inner_product}, {"cyclic_shift", cyclic_shift},
        {"orthogonality", orthogonality}, {"period", period}};
    for (const auto& [name, value] : checks)
      if (!(value <= tolerance)) return name;
    return {};
  }
};

inline FrameReport check_frame(const SimplexFrame& frame, double tol) {
  if (!(tol > 0)) throw DomainError("check_frame: tolerance must be positive");
  const int k = frame.k();
  const int d = frame.d();
  const auto& v = frame.vertices();
  const auto& r = frame.rotation();
  FrameReport rep;
  rep.tolerance = tol;
  for (int i = 0; i < k; ++i) rep.unit_norm = std::max(rep.unit_norm, std::abs(v.col(i).norm() - 1.0));
  rep.vertex_sum = v.rowwise().sum().norm();
  const double target = -1.0 / static_cast<double>(k - 1);
  for (int i = 0; i < k; ++i)
    for (int j = i + 1; j < k; ++j)
      rep.inner_product = std::max(rep.inner_product, std::abs(v.col(i).dot(v.col(j)) - target));
  for (int i = 0; i < k; ++i)
    rep.cyclic_shift = std::max(rep.cyclic_shift, (r * v.col(i) - v.col((i + 1) % k)).norm());
  Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(d, d);
  rep.orthogonality = (r.transpose() * r - eye).cwiseAbs().maxCoeff();
  Eigen::MatrixXd rk = eye;
  for (int j = 0; j < k; ++j) rk = r * rk;
  rep.period = (rk - eye).cwiseAbs().maxCoeff();
  rep.pass = rep.first_failure().empty();
  return rep;
}

}  // namespace overem
