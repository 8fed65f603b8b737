#pragma once

// Population EM for the simplex-structured mixture fitted to N(0, I):
// the EM operator M(θ), the negative population log-likelihood L(θ), the KL
// divergence L(θ) - L(0), spectral diagnostics at θ* = 0, and the iteration
// loop with its trace.

#include <Eigen/Dense>

#include <cmath>
#include <complex>
#include <limits>
#include <optional>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "overem/engine.hpp"
#include "overem/errors.hpp"
#include "overem/mixture.hpp"
#include "overem/rng.hpp"
#include "overem/simplex.hpp"
#include "overem/stats.hpp"

namespace overem {

inline Eigen::VectorXd em_operator(const ExpectationEngine& engine, const SimplexFrame& frame,
                                   const MixtureSpec& spec, const Eigen::VectorXd& theta) {
  return expect(engine, frame, spec, theta, Integrand::em_update).value;
}

inline double neg_log_likelihood(const ExpectationEngine& engine, const SimplexFrame& frame,
                                 const MixtureSpec& spec, const Eigen::VectorXd& theta) {
  return expect(engine, frame, spec, theta, Integrand::neg_log_lik).scalar();
}

/// KL[N(0, I) ‖ G(θ)] evaluated as a single CRN difference, with its standard error.
inline Estimate kl_estimate(const ExpectationEngine& engine, const SimplexFrame& frame, const MixtureSpec& spec,
                            const Eigen::VectorXd& theta) {
  return expect(engine, frame, spec, theta, Integrand::kl_divergence);
}

inline double kl_to_standard_normal(const ExpectationEngine& engine, const SimplexFrame& frame,
                                    const MixtureSpec& spec, const Eigen::VectorXd& theta) {
  return kl_estimate(engine, frame, spec, theta).scalar();
}

/// ∇L(θ) = θ - M(θ).
inline Eigen::VectorXd grad_neg_log_likelihood(const ExpectationEngine& engine, const SimplexFrame& frame,
                                               const MixtureSpec& spec, const Eigen::VectorXd& theta) {
  return theta - em_operator(engine, frame, spec, theta);
}

// ---------------------------------------------------------------------------
// Spectral diagnostics at θ* = 0

struct SpectralReport {
  Eigen::MatrixXd a;         // Σ_j π_j R^(j-1)
  Eigen::MatrixXd hessian0;  // A Aᵀ
  Eigen::VectorXd eigenvalues;             // of A Aᵀ, ascending
  Eigen::VectorXd subspace_eigenvalues;    // restricted to the simplex subspace
  Eigen::VectorXd singular_values;         // of A, descending
  std::vector<double> dft_moduli_sq;       // |π̂(l)|², l = 1..k-1
  double lambda_min = 0.0;
  double lambda_max = 0.0;
  double lambda_min_subspace = 0.0;
  double kappa_bound = 1.0;  // 1 - λ_min / 4
  bool invertible = false;
  bool degenerate = false;   // some π̂(l) vanishes: rate hypotheses violated
};

inline Eigen::MatrixXd weighted_rotation_sum(const SimplexFrame& frame, const MixtureSpec& spec) {
  detail::check_compatible(frame, spec);
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(frame.d(), frame.d());
  for (int j = 0; j < frame.k(); ++j) a += spec.weights[j] * frame.power(j);
  return a;
}

inline SpectralReport spectral_report(const SimplexFrame& frame, const MixtureSpec& spec) {
  SpectralReport rep;
  rep.a = weighted_rotation_sum(frame, spec);
  rep.hessian0 = rep.a * rep.a.transpose();
  rep.hessian0 = 0.5 * (rep.hessian0 + rep.hessian0.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(rep.hessian0, Eigen::EigenvaluesOnly);
  rep.eigenvalues = eig.eigenvalues();
  rep.lambda_min = std::max(0.0, rep.eigenvalues.minCoeff());
  rep.lambda_max = rep.eigenvalues.maxCoeff();

  const Eigen::MatrixXd& u = frame.subspace_basis();
  Eigen::MatrixXd sub = u.transpose() * rep.hessian0 * u;
  sub = 0.5 * (sub + sub.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> sub_eig(sub, Eigen::EigenvaluesOnly);
  rep.subspace_eigenvalues = sub_eig.eigenvalues();
  rep.lambda_min_subspace = std::max(0.0, rep.subspace_eigenvalues.minCoeff());

  Eigen::JacobiSVD<Eigen::MatrixXd> svd(rep.a);
  rep.singular_values = svd.singularValues();
  rep.invertible = rep.singular_values.minCoeff() > 1e-10;
  for (int l = 1; l < spec.k; ++l) rep.dft_moduli_sq.push_back(std::norm(spec.weight_dft[l]));
  rep.degenerate = spec.degenerate;
  rep.kappa_bound = 1.0 - rep.lambda_min / 4.0;
  return rep;
}

struct JacobianReport {
  Eigen::MatrixXd finite_difference;  // ∂M/∂θ(0) by central differences
  Eigen::MatrixXd analytic;           // I - A Aᵀ
  double max_error = 0.0;
  double hessian_asymmetry = 0.0;     // max |H - Hᵀ| for the FD Hessian I - ∂M/∂θ
};

inline JacobianReport jacobian_check(const ExpectationEngine& engine, const SimplexFrame& frame,
                                     const MixtureSpec& spec, double fd_step = 1e-4) {
  if (!(fd_step > 0)) throw DomainError("jacobian_check: fd_step must be positive");
  const int d = frame.d();
  JacobianReport rep;
  rep.finite_difference.resize(d, d);
  for (int i = 0; i < d; ++i) {
    Eigen::VectorXd e = Eigen::VectorXd::Zero(d);
    e[i] = fd_step;
    rep.finite_difference.col(i) =
        (em_operator(engine, frame, spec, e) - em_operator(engine, frame, spec, -e)) / (2.0 * fd_step);
  }
  const Eigen::MatrixXd a = weighted_rotation_sum(frame, spec);
  rep.analytic = Eigen::MatrixXd::Identity(d, d) - a * a.transpose();
  rep.max_error = (rep.finite_difference - rep.analytic).cwiseAbs().maxCoeff();
  const Eigen::MatrixXd hess = Eigen::MatrixXd::Identity(d, d) - rep.finite_difference;
  rep.hessian_asymmetry = (hess - hess.transpose()).cwiseAbs().maxCoeff();
  return rep;
}

/// Central-difference gradient of L, the independent route to ∇L.
inline Eigen::VectorXd finite_difference_gradient(const ExpectationEngine& engine, const SimplexFrame& frame,
                                                  const MixtureSpec& spec, const Eigen::VectorXd& theta,
                                                  double step = 1e-4) {
  Eigen::VectorXd g(theta.size());
  for (Eigen::Index i = 0; i < theta.size(); ++i) {
    Eigen::VectorXd plus = theta, minus = theta;
    plus[i] += step;
    minus[i] -= step;
    g[i] = (neg_log_likelihood(engine, frame, spec, plus) - neg_log_likelihood(engine, frame, spec, minus)) /
           (2.0 * step);
  }
  return g;
}

// ---------------------------------------------------------------------------
// Iteration

struct RunOptions {
  int max_iter = 200;
  double kl_stop = 1e-10;
  double init_radius = 0.25;
  /// When set, replaces θ ← M(θ) with the gradient-EM step θ ← θ - η ∇L(θ).
  std::optional<double> gradient_step;
};

struct EmRecord {
  int t = 0;
  Eigen::VectorXd theta;
  double kl = 0.0;
  double kl_std_error = 0.0;
  double noise_floor = 0.0;
  double grad_norm = 0.0;
  std::optional<double> ratio;  // kl_t / kl_{t-1}, t >= 1
};

enum class StopReason { max_iter, kl_stop, noise_floor };

inline const char* to_string(StopReason r) {
  switch (r) {
    case StopReason::max_iter: return "max_iter";
    case StopReason::kl_stop: return "kl_stop";
    case StopReason::noise_floor: return "noise_floor";
  }
  return "?";
}

struct EmTrace {
  std::vector<EmRecord> records;
  std::optional<double> kappa_bound;  // empty when the weight DFT vanishes somewhere
  double lambda_min = 0.0;
  bool hypotheses_violated = false;
  bool theta0_outside_init_radius = false;
  bool left_init_ball = false;  // some iterate had ‖θ_t‖ > init_radius
  StopReason stop_reason = StopReason::max_iter;
  std::string engine_fingerprint;
  std::string frame_fingerprint;
  std::string spec_fingerprint;
};

inline std::string frame_fingerprint(const SimplexFrame& frame) {
  return "simplex(k=" + std::to_string(frame.k()) + ",d=" + std::to_string(frame.d()) + ")";
}

inline std::string spec_fingerprint(const MixtureSpec& spec) {
  std::ostringstream os;
  os.precision(17);
  os << "weights(";
  for (int j = 0; j < spec.k; ++j) os << (j ? "," : "") << spec.weights[j];
  os << ")";
  return os.str();
}

namespace detail {

inline EmRecord make_record(const ExpectationEngine& engine, const SimplexFrame& frame, const MixtureSpec& spec,
                            int t, const Eigen::VectorXd& theta, const Eigen::VectorXd& m_theta) {
  EmRecord rec;
  rec.t = t;
  rec.theta = theta;
  const Estimate kl = kl_estimate(engine, frame, spec, theta);
  rec.kl = kl.scalar();
  rec.kl_std_error = kl.scalar_error();
  rec.noise_floor = engine.kl_noise_floor(rec.kl_std_error);
  rec.grad_norm = (theta - m_theta).norm();
  return rec;
}

inline void start_trace(EmTrace& trace, const ExpectationEngine& engine, const SimplexFrame& frame,
                        const MixtureSpec& spec, const Eigen::VectorXd& theta0, const RunOptions& opts) {
  if (opts.max_iter < 1) throw DomainError("max_iter must be >= 1");
  const SpectralReport spectral = spectral_report(frame, spec);
  trace.lambda_min = spectral.lambda_min;
  trace.hypotheses_violated = spec.degenerate;
  if (!spec.degenerate) trace.kappa_bound = spectral.kappa_bound;
  trace.theta0_outside_init_radius = theta0.norm() > opts.init_radius;
  trace.engine_fingerprint = engine.fingerprint();
  trace.frame_fingerprint = frame_fingerprint(frame);
  trace.spec_fingerprint = spec_fingerprint(spec);
}

/// Shared loop: `step(θ)` returns the next iterate, `m_of(θ)` the population M(θ).
template <class Step>
EmTrace run_em_loop(const ExpectationEngine& engine, const SimplexFrame& frame, const MixtureSpec& spec,
                    const Eigen::VectorXd& theta0, const RunOptions& opts, Step&& step) {
  EmTrace trace;
  start_trace(trace, engine, frame, spec, theta0, opts);
  const double guard = 10.0 * theta0.norm() + 1.0;
  Eigen::VectorXd theta = theta0;
  Eigen::VectorXd m_theta = em_operator(engine, frame, spec, theta);
  trace.records.push_back(make_record(engine, frame, spec, 0, theta, m_theta));
  for (int t = 1; t <= opts.max_iter; ++t) {
    const EmRecord& prev = trace.records.back();
    if (prev.kl <= opts.kl_stop) {
      trace.stop_reason = StopReason::kl_stop;
      break;
    }
    if (prev.kl <= prev.noise_floor) {
      trace.stop_reason = StopReason::noise_floor;
      break;
    }
    theta = step(theta, m_theta);
    if (!theta.allFinite() || theta.norm() > guard)
      throw DivergenceError("EM iterate left the divergence guard ‖θ‖ <= 10‖θ0‖ + 1 at t = " + std::to_string(t));
    if (theta.norm() > opts.init_radius) trace.left_init_ball = true;
    m_theta = em_operator(engine, frame, spec, theta);
    EmRecord rec = make_record(engine, frame, spec, t, theta, m_theta);
    if (prev.kl > 0.0) rec.ratio = rec.kl / prev.kl;
    trace.records.push_back(std::move(rec));
  }
  return trace;
}

}  // namespace detail

/// θ_{t+1} = M(θ_t) until max_iter, kl_t <= kl_stop, or kl_t under the engine noise floor.
inline EmTrace run_population_em(const ExpectationEngine& engine, const SimplexFrame& frame,
                                 const MixtureSpec& spec, const Eigen::VectorXd& theta0,
                                 const RunOptions& opts = {}) {
  detail::check_engine(engine, frame, spec, theta0);
  return detail::run_em_loop(engine, frame, spec, theta0, opts,
                             [&](const Eigen::VectorXd& theta, const Eigen::VectorXd& m_theta) -> Eigen::VectorXd {
                               if (opts.gradient_step) return theta - *opts.gradient_step * (theta - m_theta);
                               return m_theta;
                             });
}

/// Log-linear fit of kl_t against t over records with kl_t > floor_factor × noise floor.
struct DecayFit {
  double per_iteration_ratio = 0.0;  // exp(slope)
  stats::LinearFit fit;
};

inline std::optional<DecayFit> fit_kl_decay(const EmTrace& trace, double floor_factor = 10.0) {
  std::vector<double> ts, logs;
  for (const auto& r : trace.records) {
    if (r.kl > floor_factor * r.noise_floor && r.kl > 0) {
      ts.push_back(r.t);
      logs.push_back(std::log(r.kl));
    }
  }
  if (ts.size() < 2) return std::nullopt;
  DecayFit out;
  out.fit = stats::linear_fit(ts, logs);
  out.per_iteration_ratio = std::exp(out.fit.slope);
  return out;
}

// ---------------------------------------------------------------------------
// Local probes around θ* = 0

inline Eigen::VectorXd uniform_in_ball(std::mt19937_64& gen, int d, double radius) {
  std::normal_distribution<double> normal;
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  Eigen::VectorXd v(d);
  do {
    for (int i = 0; i < d; ++i) v[i] = normal(gen);
  } while (v.norm() == 0.0);
  const double r = radius * std::pow(unif(gen), 1.0 / d);
  return v.normalized() * r;
}

struct PlReport {
  double min_margin = 0.0;  // min over probes of ‖∇L‖² - λ_min (L(θ) - L(0))
  double tolerance = 0.0;   // -ε_engine
  double lambda_min = 0.0;
  int n_probes = 0;
  Eigen::VectorXd worst_theta;
  bool pass = false;
};

inline PlReport pl_inequality_probe(const ExpectationEngine& engine, const SimplexFrame& frame,
                                    const MixtureSpec& spec, double radius, int n_probes, std::uint64_t seed) {
  if (!(radius > 0)) throw DomainError("pl_inequality_probe: radius must be positive");
  if (n_probes < 1) throw DomainError("pl_inequality_probe: need at least one probe");
  PlReport rep;
  rep.lambda_min = spectral_report(frame, spec).lambda_min;
  rep.n_probes = n_probes;
  rep.min_margin = std::numeric_limits<double>::infinity();
  double worst_noise = 0.0;
  std::mt19937_64 gen(rng::derive_seed(seed, "pl-probe"));
  for (int p = 0; p < n_probes; ++p) {
    const Eigen::VectorXd theta = uniform_in_ball(gen, frame.d(), radius);
    const Estimate m = expect(engine, frame, spec, theta, Integrand::em_update);
    const Estimate kl = kl_estimate(engine, frame, spec, theta);
    const double grad_sq = (theta - m.value).squaredNorm();
    const double margin = grad_sq - rep.lambda_min * kl.scalar();
    const double noise = engine.mode() == EngineMode::gauss_hermite
                             ? kQuadratureNoiseFloor
                             : 3.0 * (2.0 * (theta - m.value).norm() * m.std_error.norm() +
                                      rep.lambda_min * kl.scalar_error());
    worst_noise = std::max(worst_noise, noise);
    if (margin < rep.min_margin) {
      rep.min_margin = margin;
      rep.worst_theta = theta;
    }
  }
  rep.tolerance = -worst_noise;
  rep.pass = rep.min_margin >= rep.tolerance;
  return rep;
}

struct ContractionReport {
  double max_ratio = 0.0;  // max ‖M(θ)‖ / ‖θ‖
  int n_probes = 0;
  bool pass = false;
};

inline ContractionReport contraction_probe(const ExpectationEngine& engine, const SimplexFrame& frame,
                                           const MixtureSpec& spec, double radius, int n_probes,
                                           std::uint64_t seed) {
  if (!(radius > 0) || n_probes < 1) throw DomainError("contraction_probe: bad radius or probe count");
  ContractionReport rep;
  rep.n_probes = n_probes;
  std::mt19937_64 gen(rng::derive_seed(seed, "contraction-probe"));
  for (int p = 0; p < n_probes; ++p) {
    const Eigen::VectorXd theta = uniform_in_ball(gen, frame.d(), radius);
    rep.max_ratio = std::max(rep.max_ratio, em_operator(engine, frame, spec, theta).norm() / theta.norm());
  }
  rep.pass = rep.max_ratio < 1.0;
  return rep;
}

// ---------------------------------------------------------------------------
// CSV

/// Columns t, theta_norm, kl, grad_norm, ratio; ratio is empty at t = 0.
inline void write_trace_rows(std::ostream& os, const EmTrace& trace) {
  os << "t,theta_norm,kl,grad_norm,ratio\n";
  const auto old_precision = os.precision(17);
  for (const auto& r : trace.records) {
    os << r.t << ',' << r.theta.norm() << ',' << r.kl << ',' << r.grad_norm << ',';
    if (r.ratio) os << *r.ratio;
    os << '\n';
  }
  os.precision(old_precision);
}

inline std::vector<std::string> trace_metadata(const EmTrace& trace) {
  std::ostringstream kappa;
  kappa.precision(17);
  if (trace.kappa_bound)
    kappa << *trace.kappa_bound;
  else
    kappa << "null";
  std::ostringstream lam;
  lam.precision(17);
  lam << trace.lambda_min;
  return {
      "kappa_bound: " + kappa.str(),
      "lambda_min: " + lam.str(),
      std::string("hypotheses: ") + (trace.hypotheses_violated ? "violated (weight DFT vanishes)" : "satisfied"),
      "frame: " + trace.frame_fingerprint,
      "spec: " + trace.spec_fingerprint,
      std::string("stop_reason: ") + to_string(trace.stop_reason),
      std::string("theta0_outside_init_radius: ") + (trace.theta0_outside_init_radius ? "true" : "false"),
      std::string("left_init_ball: ") + (trace.left_init_ball ? "true" : "false"),
  };
}

}  // namespace overem
