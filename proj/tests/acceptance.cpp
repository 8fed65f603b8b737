// Acceptance checks. Run with no arguments for all criteria or `--criterion N` for one.
// Prints one PASS/FAIL line per criterion and exits nonzero if any fails.
#include <boost/math/quadrature/exp_sinh.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "overem/csv.hpp"
#include "overem/experiments.hpp"
#include "overem/lloyd.hpp"
#include "overem/population_em.hpp"
#include "overem/sample_em.hpp"

using namespace overem;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double x) {
  std::ostringstream os;
  os.precision(6);
  os << x;
  return os.str();
}

EmTrace population_trace(std::initializer_list<double> weights) {
  const auto f = build_simplex(2, 1);
  const auto spec = make_mixture(weights);
  const ExpectationEngine gh(EngineConfig::gauss_hermite(), f);
  RunOptions o;
  o.max_iter = 200;
  o.kl_stop = 1e-10;
  return run_population_em(gh, f, spec, 0.3 * f.vertex(0), o);
}

// Ratio kl_t / kl_(t-1) at or below kappa whenever kl_t is above 10x the noise floor; log-linear R^2 >= 0.99.
Outcome criterion1() {
  const auto trace = population_trace({0.7, 0.3});
  const double kappa = 0.96;
  double worst = 0.0;
  int counted = 0;
  for (const auto& r : trace.records) {
    if (!r.ratio || !(r.kl > 10.0 * r.noise_floor)) continue;
    worst = std::max(worst, *r.ratio);
    ++counted;
  }
  const auto fit = fit_kl_decay(trace);
  const double r2 = fit ? fit->fit.r_squared : 0.0;
  const bool kappa_ok = trace.kappa_bound && std::abs(*trace.kappa_bound - kappa) < 1e-12;
  return {kappa_ok && counted > 0 && worst <= kappa && r2 >= 0.99,
          "max ratio " + fmt(worst) + " <= 0.96 over " + std::to_string(counted) + " iterations, R^2 " + fmt(r2) +
              " >= 0.99"};
}

// Balanced weights: some ratio within the first 20 iterations exceeds 0.999.
Outcome criterion2() {
  const auto trace = population_trace({0.5, 0.5});
  double best = 0.0;
  for (const auto& r : trace.records)
    if (r.t <= 20 && r.ratio) best = std::max(best, *r.ratio);
  return {best > 0.999, "max ratio over t <= 20 is " + fmt(best) + " (needs > 0.999)"};
}

Outcome criterion3() {
  const auto f = build_simplex(2, 1);
  const auto spec = make_mixture({0.7, 0.3});
  const ExpectationEngine gh(EngineConfig::gauss_hermite(), f);
  const auto exp = run_rate_experiment(gh, f, spec, 0.3 * f.vertex(0), {1000, 10000, 100000}, 20, 0);
  const double slope = exp.kl_fit ? exp.kl_fit->slope : std::nan("");
  return {std::abs(slope + 1.0) <= 0.2, "median KL slope " + fmt(slope) + " (target -1 +/- 0.2)"};
}

Outcome criterion4() {
  double worst = 0.0;
  for (auto [k, d] : {std::pair{2, 1}, std::pair{3, 2}, std::pair{4, 3}}) {
    std::vector<double> w(k);
    for (int j = 0; j < k; ++j) w[j] = static_cast<double>(k - j);
    double s = 0.0;
    for (double x : w) s += x;
    for (double& x : w) x /= s;
    const auto f = build_simplex(k, d);
    const auto spec = make_mixture(w);
    const ExpectationEngine gh(EngineConfig::gauss_hermite(), f);
    worst = std::max(worst, jacobian_check(gh, f, spec).max_error);
  }
  return {worst <= 1e-4, "max elementwise FD error " + fmt(worst) + " <= 1e-4"};
}

Outcome criterion5() {
  const auto f = build_simplex(3, 2);
  const auto spec = make_mixture({0.5, 0.3, 0.2});
  const ExpectationEngine gh(EngineConfig::gauss_hermite(), f);
  std::mt19937_64 gen(rng::derive_seed(0, "acceptance-gradient"));
  double worst = 0.0;
  for (int i = 0; i < 20; ++i) {
    const Eigen::VectorXd theta = uniform_in_ball(gen, 2, 0.5);
    const Eigen::VectorXd analytic = theta - em_operator(gh, f, spec, theta);
    worst = std::max(worst, (analytic - finite_difference_gradient(gh, f, spec, theta)).norm());
  }
  return {worst <= 1e-5, "max gradient mismatch " + fmt(worst) + " <= 1e-5"};
}

Outcome criterion6() {
  std::mt19937_64 gen(rng::derive_seed(0, "acceptance-spectrum"));
  std::exponential_distribution<double> expo(1.0);
  double worst = 0.0;
  int cases = 0;
  for (int k = 2; k <= 5; ++k) {
    for (int rep = 0; rep < 10; ++rep) {
      std::vector<double> w(k);
      double s = 0.0;
      for (double& x : w) s += (x = expo(gen));
      for (double& x : w) x /= s;
      const auto spec = make_mixture(w);
      for (int d : {k - 1, k + 1}) {
        const auto f = build_simplex(k, d);
        const Eigen::MatrixXd a = weighted_rotation_sum(f, spec);
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(a * a.transpose());
        std::vector<double> got(eig.eigenvalues().data(), eig.eigenvalues().data() + d);
        std::vector<double> want(static_cast<std::size_t>(d - k + 1), 1.0);
        const auto dft = weight_dft(w);
        for (int l = 1; l < k; ++l) want.push_back(std::norm(dft[l]));
        std::sort(got.begin(), got.end());
        std::sort(want.begin(), want.end());
        for (int i = 0; i < d; ++i) worst = std::max(worst, std::abs(got[i] - want[i]));
        ++cases;
      }
    }
  }
  return {worst <= 1e-10, "max eigenvalue mismatch " + fmt(worst) + " <= 1e-10 over " + std::to_string(cases) +
                              " (weights, d) cases"};
}

Outcome criterion7() {
  std::string detail;
  bool pass = true;
  for (auto weights : {std::vector<double>{0.7, 0.3}, std::vector<double>{0.5, 0.3, 0.2}}) {
    const int k = static_cast<int>(weights.size());
    const auto f = build_simplex(k, k - 1);
    const auto spec = make_mixture(weights);
    const ExpectationEngine gh(EngineConfig::gauss_hermite(), f);
    const auto rep = pl_inequality_probe(gh, f, spec, 0.2, 200, 0);
    pass = pass && rep.pass;
    detail += "k=" + std::to_string(k) + " min margin " + fmt(rep.min_margin) + " >= " + fmt(rep.tolerance) + "; ";
  }
  return {pass, detail};
}

Outcome criterion8() {
  bool pass = true;
  std::string detail;
  // Radius oracle: ratio of radial Gaussian moments by double-exponential quadrature.
  boost::math::quadrature::exp_sinh<double> integrator;
  double oracle_err = 0.0;
  for (int d = 1; d <= 10; ++d) {
    auto moment = [](int p) {
      return [p](double r) { return r > 1e3 ? 0.0 : std::pow(r, p) * std::exp(-0.5 * r * r); };
    };
    const double ref = integrator.integrate(moment(d)) / integrator.integrate(moment(d - 1));
    oracle_err = std::max(oracle_err, std::abs(population_lloyd_radius(d) - ref));
  }
  pass = oracle_err <= 1e-8;
  detail += "R0 oracle error " + fmt(oracle_err) + " <= 1e-8; ";
  for (auto [k, d] : {std::pair{3, 2}, std::pair{4, 3}}) {
    const auto f = build_simplex(k, d);
    const double r0 = population_lloyd_radius(d);
    const ExpectationEngine mc(EngineConfig::monte_carlo(1'000'000, 0), f);
    const auto up = population_lloyd_update(f, r0, mc);
    const bool move_ok = up.max_relative_move <= 0.02;

    LloydConfig cfg;
    cfg.k = k;
    cfg.d = d;
    const Dataset data(10000, d, rng::derive_seed(0, "acceptance-lloyd", static_cast<std::uint64_t>(k)));
    const auto km = run_sample_kmeans(cfg, data);
    const auto reg = experiments::regularity(km.centers);
    const double radius_dev = std::abs(reg.mean_radius / r0 - 1.0);
    const bool radius_ok = radius_dev <= 0.07;
    const bool pair_ok = reg.pairwise_spread <= 0.07;
    pass = pass && move_ok && radius_ok && pair_ok;
    detail += "k=" + std::to_string(k) + " move " + fmt(up.max_relative_move) + " <= 0.02, k-means radius dev " +
              fmt(radius_dev) + " <= 0.07, pairwise spread " + fmt(reg.pairwise_spread) + " <= 0.07; ";
  }
  return {pass, detail};
}

Outcome criterion9() {
  const auto f = build_simplex(2, 1);
  const auto spec = make_mixture({0.7, 0.3});
  const ExpectationEngine gh(EngineConfig::gauss_hermite(), f);
  const std::vector<std::size_t> ns = {1000, 10000, 100000};
  const auto base = perturbation_probe(gh, f, spec, 0.2, ns, 16, 10, 0);
  const auto doubled = perturbation_probe(gh, f, spec, 0.4, ns, 16, 10, 0);
  const double slope = base.fit ? base.fit->slope : std::nan("");
  double log_sum = 0.0;
  for (std::size_t i = 0; i < ns.size(); ++i) log_sum += std::log(doubled.summaries[i].median / base.summaries[i].median);
  const double ratio = std::exp(log_sum / static_cast<double>(ns.size()));
  return {std::abs(slope + 0.5) <= 0.1 && ratio >= 1.5 && ratio <= 2.5,
          "sup-deviation slope " + fmt(slope) + " (target -0.5 +/- 0.1), radius doubling factor " + fmt(ratio) +
              " in [1.5, 2.5]"};
}

Outcome criterion10() {
  double worst = -std::numeric_limits<double>::infinity();
  for (const auto& trace : {population_trace({0.7, 0.3}), population_trace({0.5, 0.5})})
    for (std::size_t i = 1; i < trace.records.size(); ++i)
      worst = std::max(worst, trace.records[i].kl - trace.records[i - 1].kl);
  return {worst <= kQuadratureNoiseFloor, "max increase of L over both traces " + fmt(worst) + " <= " +
                                              fmt(kQuadratureNoiseFloor)};
}

Outcome criterion11() {
  const fs::path root = fs::temp_directory_path() / "overem_acceptance_determinism";
  fs::remove_all(root);
  int compared = 0;
  std::string mismatch;
  for (const auto& command : experiments::command_names()) {
    const auto cfg = experiments::resolve_config(command, {}, {{"out", (root / command).string()}});
    std::ostringstream sink;
    const auto first = experiments::run_command(cfg, sink);
    std::map<fs::path, std::string> bytes;
    for (const auto& p : first.files)
      if (p.extension() == ".csv") bytes[p] = io::read_file(p);
    const auto second = experiments::run_command(cfg, sink);
    for (const auto& p : second.files) {
      if (p.extension() != ".csv") continue;
      ++compared;
      if (!bytes.count(p) || bytes[p] != io::read_file(p)) mismatch += p.filename().string() + " ";
    }
  }
  fs::remove_all(root);
  return {mismatch.empty() && compared > 0,
          std::to_string(compared) + " CSV files compared" + (mismatch.empty() ? "" : ", differing: " + mismatch)};
}

struct Criterion {
  int id;
  double budget_seconds;
  std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> all = {
      {1, 60, criterion1},   {2, 60, criterion2},   {3, 600, criterion3}, {4, 60, criterion4},
      {5, 120, criterion5},  {6, 10, criterion6},   {7, 180, criterion7}, {8, 300, criterion8},
      {9, 600, criterion9},  {10, 120, criterion10}, {11, 600, criterion11},
  };
  int only = 0;
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    if (arg == "--criterion" && i + 1 < argc) {
      only = std::atoi(argv[++i]);
    } else {
      std::cerr << "usage: acceptance [--criterion N]\n";
      return 2;
    }
  }
  bool all_pass = true;
  bool ran = false;
  for (const auto& c : all) {
    if (only != 0 && c.id != only) continue;
    ran = true;
    const auto start = std::chrono::steady_clock::now();
    Outcome out;
    try {
      out = c.run();
    } catch (const std::exception& e) {
      out = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const bool in_time = secs < c.budget_seconds;
    const bool pass = out.pass && in_time;
    all_pass = all_pass && pass;
    std::cout << (pass ? "PASS" : "FAIL") << " criterion " << c.id << ": " << out.detail << " [" << fmt(secs)
              << " s, budget " << c.budget_seconds << " s]" << std::endl;
  }
  if (!ran) {
    std::cerr << "unknown criterion " << only << "\n";
    return 2;
  }
  return all_pass ? 0 : 1;
}
