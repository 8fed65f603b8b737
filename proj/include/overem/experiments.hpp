#pragma once

// Experiment orchestration behind the command-line tool: config resolution
// (defaults < config file < command-line flags), the six commands, and their
// CSV/SVG outputs.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "overem/csv.hpp"
#include "overem/engine.hpp"
#include "overem/errors.hpp"
#include "overem/lloyd.hpp"
#include "overem/mixture.hpp"
#include "overem/population_em.hpp"
#include "overem/rng.hpp"
#include "overem/sample_em.hpp"
#include "overem/simplex.hpp"
#include "overem/stats.hpp"
#include "overem/svg.hpp"

namespace overem::experiments {

inline constexpr const char* kToolVersion = "overem 0.1.0";

inline const std::vector<std::string>& command_names() {
  static const std::vector<std::string> names = {"spectrum", "population-run", "sample-run",
                                                 "lloyd",    "verify",         "perturbation"};
  return names;
}

/// Every recognised key with its built-in default. An empty default is
/// filled in per command during resolution.
inline const std::map<std::string, std::string>& default_values() {
  static const std::map<std::string, std::string> defaults = {
      {"k", "2"},
      {"d", ""},
      {"weights", ""},
      {"theta0-norm", "0.3"},
      {"seed", "0"},
      {"engine", "auto"},
      {"mc-samples", "2000000"},
      {"gh-nodes", "40"},
      {"out", "results"},
      {"max-iter", "200"},
      {"kl-stop", "1e-10"},
      {"init-radius", "0.3"},
      {"gradient-step", ""},
      {"n-grid", "1000,10000,100000"},
      {"seeds", ""},
      {"radius", "0.2"},
      {"theta-grid", "16"},
      {"probes", "200"},
      {"lloyd-n", "10000"},
  };
  return defaults;
}

struct ExperimentConfig {
  std::string command;
  int k = 2;
  int d = 1;
  std::vector<std::vector<double>> weight_sets;
  double theta0_norm = 0.3;
  std::uint64_t seed = 0;
  std::string engine = "auto";
  std::size_t mc_samples = 2'000'000;
  int gh_nodes = 40;
  std::filesystem::path out = "results";
  int max_iter = 200;
  double kl_stop = 1e-10;
  double init_radius = 0.3;
  std::optional<double> gradient_step;
  std::vector<std::size_t> n_grid;
  int seeds = 20;
  double radius = 0.2;
  int theta_grid = 16;
  int probes = 200;
  std::size_t lloyd_n = 10'000;

  std::map<std::string, std::string> resolved;  // final value of every key

  const std::vector<double>& weights() const { return weight_sets.front(); }
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const double x = std::stod(v, &pos);
    if (pos != v.size() || !std::isfinite(x)) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': expected a number, got '" + v + "'");
  }
}

inline long long parse_integer(const std::string& key, const std::string& v) {
  const double x = parse_double(key, v);
  if (x != std::floor(x) || std::abs(x) > 9.0e15)
    throw ConfigError("config key '" + key + "': expected an integer, got '" + v + "'");
  return static_cast<long long>(x);
}

inline std::uint64_t parse_seed(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const unsigned long long x = std::stoull(v, &pos, 0);
    if (pos != v.size() || v.front() == '-') throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': expected a nonnegative integer, got '" + v + "'");
  }
}

inline std::vector<double> parse_list(const std::string& key, const std::string& v) {
  std::vector<double> out;
  for (const auto& part : io::split(v, ',')) out.push_back(parse_double(key, trim(part)));
  if (out.empty()) throw ConfigError("config key '" + key + "' is empty");
  return out;
}

inline std::string default_weights(const std::string& command, int k) {
  if (k == 2) return command == "population-run" ? "0.6,0.4;0.7,0.3;0.9,0.1" : "0.7,0.3";
  if (k == 3) return "0.5,0.3,0.2";
  // Linear ramp π_j ∝ k + 1 - j; its DFT never vanishes off zero.
  std::ostringstream os;
  os.precision(17);
  const double total = 0.5 * k * (k + 1);
  for (int j = 0; j < k; ++j) os << (j ? "," : "") << (k - j) / total;
  return os.str();
}

inline std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << "0x" << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

inline std::string fmt(double v, int precision = 6) {
  std::ostringstream os;
  os.precision(precision);
  os << v;
  return os.str();
}

inline std::string weights_label(const std::vector<double>& w) {
  std::string s = "(";
  for (std::size_t i = 0; i < w.size(); ++i) s += (i ? "," : "") + fmt(w[i], 4);
  return s + ")";
}

}  // namespace detail

/// Flat "key = value" lines; blank lines and lines starting with '#' are ignored.
inline std::map<std::string, std::string> parse_config_text(const std::string& text) {
  std::map<std::string, std::string> out;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const std::string t = detail::trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(lineno) + ": expected 'key = value'");
    std::string key = detail::trim(t.substr(0, eq));
    std::string value = detail::trim(t.substr(eq + 1));
    if (value.size() >= 2 && value.front() == '"' && value.back() == '"') value = value.substr(1, value.size() - 2);
    if (!default_values().contains(key)) throw ConfigError("unknown config key '" + key + "'");
    out[key] = value;
  }
  return out;
}

inline std::map<std::string, std::string> read_config_file(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot read config file " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return parse_config_text(ss.str());
}

/// Resolves and validates a complete configuration. `file_values` and
/// `cli_values` may only contain known keys; CLI values win over file values.
inline ExperimentConfig resolve_config(const std::string& command,
                                       const std::map<std::string, std::string>& file_values,
                                       const std::map<std::string, std::string>& cli_values) {
  const auto& names = command_names();
  if (std::find(names.begin(), names.end(), command) == names.end())
    throw ConfigError("unknown command '" + command + "'");
  std::map<std::string, std::string> v = default_values();
  for (const auto* layer : {&file_values, &cli_values})
    for (const auto& [key, value] : *layer) {
      if (!v.contains(key)) throw ConfigError("unknown config key '" + key + "'");
      v[key] = detail::trim(value);
    }

  ExperimentConfig c;
  c.command = command;
  c.k = static_cast<int>(detail::parse_integer("k", v["k"]));
  if (c.k < 2) throw ConfigError("k must be >= 2");
  if (v["d"].empty()) v["d"] = std::to_string(c.k - 1);
  c.d = static_cast<int>(detail::parse_integer("d", v["d"]));
  if (c.d < 1) throw ConfigError("d must be >= 1");
  if (c.d < c.k - 1) throw ConfigError("d must be >= k - 1 (got k=" + v["k"] + ", d=" + v["d"] + ")");

  if (v["weights"].empty()) v["weights"] = detail::default_weights(command, c.k);
  for (const auto& set : io::split(v["weights"], ';')) {
    if (detail::trim(set).empty()) continue;
    auto w = detail::parse_list("weights", set);
    if (static_cast<int>(w.size()) != c.k)
      throw ConfigError("weights: expected " + std::to_string(c.k) + " values per set, got " +
                        std::to_string(w.size()));
    try {
      (void)make_mixture(w);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string("weights: ") + e.what());
    }
    c.weight_sets.push_back(std::move(w));
  }
  if (c.weight_sets.empty()) throw ConfigError("weights: no weight set given");

  c.theta0_norm = detail::parse_double("theta0-norm", v["theta0-norm"]);
  if (c.theta0_norm < 0) throw ConfigError("theta0-norm must be >= 0");
  c.seed = detail::parse_seed("seed", v["seed"]);

  c.engine = v["engine"];
  if (c.engine != "auto" && c.engine != "gh" && c.engine != "mc")
    throw ConfigError("engine must be one of gh, mc, auto");
  if (c.engine == "gh" && c.k - 1 > kMaxQuadratureDim)
    throw ConfigError("engine gh supports k <= " + std::to_string(kMaxQuadratureDim + 1));
  const long long mc = detail::parse_integer("mc-samples", v["mc-samples"]);
  if (mc < 2) throw ConfigError("mc-samples must be >= 2");
  c.mc_samples = static_cast<std::size_t>(mc);
  c.gh_nodes = static_cast<int>(detail::parse_integer("gh-nodes", v["gh-nodes"]));
  if (c.gh_nodes < 2 || c.gh_nodes > 200) throw ConfigError("gh-nodes must be in [2, 200]");

  if (v["out"].empty()) throw ConfigError("out must not be empty");
  c.out = v["out"];
  c.max_iter = static_cast<int>(detail::parse_integer("max-iter", v["max-iter"]));
  if (c.max_iter < 1) throw ConfigError("max-iter must be >= 1");
  c.kl_stop = detail::parse_double("kl-stop", v["kl-stop"]);
  if (c.kl_stop < 0) throw ConfigError("kl-stop must be >= 0");
  c.init_radius = detail::parse_double("init-radius", v["init-radius"]);
  if (!(c.init_radius > 0)) throw ConfigError("init-radius must be positive");
  if (!v["gradient-step"].empty()) {
    c.gradient_step = detail::parse_double("gradient-step", v["gradient-step"]);
    if (!(*c.gradient_step > 0)) throw ConfigError("gradient-step must be positive");
  }

  for (double n : detail::parse_list("n-grid", v["n-grid"])) {
    if (n < 1 || n != std::floor(n)) throw ConfigError("n-grid entries must be positive integers");
    c.n_grid.push_back(static_cast<std::size_t>(n));
  }
  if (v["seeds"].empty()) v["seeds"] = (command == "perturbation" || command == "verify") ? "10" : "20";
  c.seeds = static_cast<int>(detail::parse_integer("seeds", v["seeds"]));
  if (c.seeds < 1) throw ConfigError("seeds must be >= 1");
  c.radius = detail::parse_double("radius", v["radius"]);
  if (!(c.radius > 0)) throw ConfigError("radius must be positive");
  c.theta_grid = static_cast<int>(detail::parse_integer("theta-grid", v["theta-grid"]));
  if (c.theta_grid < 1) throw ConfigError("theta-grid must be >= 1");
  c.probes = static_cast<int>(detail::parse_integer("probes", v["probes"]));
  if (c.probes < 1) throw ConfigError("probes must be >= 1");
  const long long ln = detail::parse_integer("lloyd-n", v["lloyd-n"]);
  if (ln < c.k) throw ConfigError("lloyd-n must be >= k");
  c.lloyd_n = static_cast<std::size_t>(ln);

  c.resolved = v;
  return c;
}

/// FNV-1a hash of the command and every resolved key=value pair.
inline std::uint64_t config_hash(const ExperimentConfig& c) {
  std::string canon = "command=" + c.command + "\n";
  for (const auto& [key, value] : c.resolved) canon += key + "=" + value + "\n";
  return rng::fnv1a64(canon);
}

inline std::string resolved_config_line(const ExperimentConfig& c) {
  std::string s;
  for (const auto& [key, value] : c.resolved) s += (s.empty() ? "" : " ") + key + "=" + value;
  return s;
}

inline EngineConfig engine_config(const ExperimentConfig& c) {
  const bool use_gh = c.engine == "gh" || (c.engine == "auto" && c.k - 1 <= kMaxQuadratureDim);
  return use_gh ? EngineConfig::gauss_hermite(c.gh_nodes) : EngineConfig::monte_carlo(c.mc_samples, c.seed);
}

/// Common metadata block of every output file.
inline std::vector<std::string> base_metadata(const ExperimentConfig& c, const std::string& engine_fp) {
  return {
      std::string("tool: ") + kToolVersion,
      "command: " + c.command,
      "config_hash: " + detail::hex64(config_hash(c)),
      "config: " + resolved_config_line(c),
      "seed: " + std::to_string(c.seed),
      "engine: " + engine_fp,
  };
}

struct CommandResult {
  int exit_code = 0;
  std::vector<std::filesystem::path> files;
};

namespace detail {

inline std::vector<std::string> concat(std::vector<std::string> a, const std::vector<std::string>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

inline void write_output(CommandResult& res, const std::filesystem::path& path, const std::string& content) {
  io::atomic_write(path, content);
  res.files.push_back(path);
}

inline std::string svg_file(const std::vector<std::string>& meta, const std::string& body) {
  // Metadata goes into an XML comment right after the root element opens.
  std::string comment = "<!--\n";
  for (const auto& m : meta) {
    std::string safe = m;
    for (std::size_t p = safe.find("--"); p != std::string::npos; p = safe.find("--", p)) safe.replace(p, 2, "- ");
    comment += "# " + safe + "\n";
  }
  comment += "-->\n";
  const auto pos = body.find('\n');
  return body.substr(0, pos + 1) + comment + body.substr(pos + 1);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// spectrum

inline CommandResult cmd_spectrum(const ExperimentConfig& c, std::ostream& out) {
  CommandResult res;
  const SimplexFrame frame = build_simplex(c.k, c.d);
  std::ostringstream csv;
  csv << "set,quantity,index,value\n";
  csv.precision(17);
  for (std::size_t s = 0; s < c.weight_sets.size(); ++s) {
    const MixtureSpec spec = make_mixture(c.weight_sets[s]);
    const SpectralReport rep = spectral_report(frame, spec);
    auto row = [&](const char* q, int i, double v) { csv << s + 1 << ',' << q << ',' << i << ',' << v << '\n'; };
    for (Eigen::Index i = 0; i < rep.singular_values.size(); ++i)
      row("singular_value", static_cast<int>(i), rep.singular_values[i]);
    for (Eigen::Index i = 0; i < rep.eigenvalues.size(); ++i)
      row("eigenvalue", static_cast<int>(i), rep.eigenvalues[i]);
    for (int l = 1; l < c.k; ++l) {
      row("dft_modulus", l, std::abs(spec.weight_dft[l]));
      row("dft_modulus_sq", l, rep.dft_moduli_sq[l - 1]);
    }
    row("lambda_min", 0, rep.lambda_min);
    row("lambda_max", 0, rep.lambda_max);
    row("kappa_bound", 0, rep.kappa_bound);
    row("invertible", 0, rep.invertible ? 1.0 : 0.0);
    row("degenerate", 0, rep.degenerate ? 1.0 : 0.0);

    out << "weights " << detail::weights_label(c.weight_sets[s]) << "  k=" << c.k << " d=" << c.d << "\n";
    if (rep.degenerate) out << "  *** degenerate: theorem hypotheses violated ***\n";
    out << "  singular values of A:";
    for (Eigen::Index i = 0; i < rep.singular_values.size(); ++i) out << ' ' << detail::fmt(rep.singular_values[i], 10);
    out << "\n  eigenvalues of AA^T: ";
    for (Eigen::Index i = 0; i < rep.eigenvalues.size(); ++i) out << ' ' << detail::fmt(rep.eigenvalues[i], 10);
    out << "\n  |dft(l)|^2, l=1..k-1:";
    for (double m : rep.dft_moduli_sq) out << ' ' << detail::fmt(m, 10);
    const double dft_min = *std::min_element(rep.dft_moduli_sq.begin(), rep.dft_moduli_sq.end());
    out << "\n  lambda_min = " << detail::fmt(rep.lambda_min, 10) << "  (min |dft|^2 = " << detail::fmt(dft_min, 10)
        << ")\n  lambda_max = " << detail::fmt(rep.lambda_max, 10)
        << "\n  kappa bound = " << detail::fmt(rep.kappa_bound, 10) << "\n";
  }
  const auto meta = base_metadata(c, "none (closed form)");
  detail::write_output(res, c.out / "spectrum.csv", io::metadata_block(meta) + csv.str());
  return res;
}

// ---------------------------------------------------------------------------
// population-run

inline svg::Series series_from(const io::CsvTable& t, const std::string& x, const std::string& y,
                               const std::string& label) {
  svg::Series s;
  s.label = label;
  s.x = t.values(x);
  s.y = t.values(y);
  return s;
}

inline std::string plot_population(const std::vector<std::filesystem::path>& traces,
                                   const std::vector<std::string>& labels, const std::string& title) {
  std::vector<svg::Series> series;
  for (std::size_t i = 0; i < traces.size(); ++i) {
    auto s = series_from(io::read_csv(traces[i]), "t", "kl", labels[i]);
    s.markers = true;
    s.marker_radius = 2.0;
    series.push_back(std::move(s));
  }
  svg::PlotOptions opt;
  opt.title = title;
  opt.x_label = "EM iteration t";
  opt.y_label = "KL(theta_t)";
  opt.log_y = true;
  opt.width = 760;
  return svg::render(opt, series);
}

inline CommandResult cmd_population_run(const ExperimentConfig& c, std::ostream& out) {
  CommandResult res;
  const SimplexFrame frame = build_simplex(c.k, c.d);
  const ExpectationEngine engine(engine_config(c), frame);
  const Eigen::VectorXd theta0 = c.theta0_norm * frame.vertex(0);
  RunOptions opts;
  opts.max_iter = c.max_iter;
  opts.kl_stop = c.kl_stop;
  opts.init_radius = c.init_radius;
  opts.gradient_step = c.gradient_step;
  const auto meta = base_metadata(c, engine.fingerprint());

  std::ostringstream summary;
  summary.precision(17);
  summary << "set,kappa_bound,lambda_min,fitted_ratio,r_squared,final_kl,iterations,hypotheses_violated\n";
  std::vector<std::filesystem::path> trace_files;
  std::vector<std::string> labels;
  for (std::size_t s = 0; s < c.weight_sets.size(); ++s) {
    const MixtureSpec spec = make_mixture(c.weight_sets[s]);
    const EmTrace trace = run_population_em(engine, frame, spec, theta0, opts);
    const auto fit = fit_kl_decay(trace);
    std::ostringstream body;
    write_trace_rows(body, trace);
    const auto path = c.out / ("population_trace_" + std::to_string(s + 1) + ".csv");
    auto file_meta = detail::concat(meta, trace_metadata(trace));
    file_meta.push_back("weights: " + detail::weights_label(c.weight_sets[s]));
    file_meta.push_back("fitted_ratio: " + (fit ? io::format_double(fit->per_iteration_ratio) : std::string("n/a")));
    detail::write_output(res, path, io::metadata_block(file_meta) + body.str());
    trace_files.push_back(path);

    summary << s + 1 << ',' << (trace.kappa_bound ? io::format_double(*trace.kappa_bound) : "") << ','
            << trace.lambda_min << ',' << (fit ? io::format_double(fit->per_iteration_ratio) : "") << ','
            << (fit ? io::format_double(fit->fit.r_squared) : "") << ',' << trace.records.back().kl << ','
            << trace.records.back().t << ',' << (trace.hypotheses_violated ? 1 : 0) << '\n';

    std::string label = detail::weights_label(c.weight_sets[s]);
    if (fit) label += " ratio " + detail::fmt(fit->per_iteration_ratio, 3);
    if (trace.kappa_bound) label += " k " + detail::fmt(*trace.kappa_bound, 3);
    labels.push_back(label);
    out << "weights " << detail::weights_label(c.weight_sets[s]) << ": " << trace.records.size() - 1
        << " iterations, final KL " << detail::fmt(trace.records.back().kl, 4) << ", fitted ratio "
        << (fit ? detail::fmt(fit->per_iteration_ratio, 4) : "n/a") << ", kappa bound "
        << (trace.kappa_bound ? detail::fmt(*trace.kappa_bound, 4) : "n/a (hypotheses violated)") << "\n";
  }
  detail::write_output(res, c.out / "population_summary.csv", io::metadata_block(meta) + summary.str());
  detail::write_output(res, c.out / "population_kl.svg",
                       detail::svg_file(meta, plot_population(trace_files, labels, "Population EM: KL vs iteration")));
  return res;
}

// ---------------------------------------------------------------------------
// sample-run

inline std::string plot_rate(const std::filesystem::path& cells_csv, const std::filesystem::path& agg_csv) {
  const auto cells = io::read_csv(cells_csv);
  const auto agg = io::read_csv(agg_csv);
  auto pts = series_from(cells, "n", "final_kl", "per seed");
  pts.line = false;
  pts.markers = true;
  pts.marker_radius = 2.0;
  pts.opacity = 0.35;
  auto med = series_from(agg, "n", "median_kl", "median");
  med.markers = true;
  auto lo = series_from(agg, "n", "q25", "quartiles");
  lo.dashed = true;
  auto hi = series_from(agg, "n", "q75", "");
  hi.dashed = true;
  hi.color = svg::detail::palette(2);
  std::string title = "Sample EM: final KL vs n";
  for (const auto& m : agg.metadata)
    if (m.rfind("fitted_slope: ", 0) == 0) title += " (slope " + m.substr(14) + ")";
  svg::PlotOptions opt;
  opt.title = title;
  opt.x_label = "sample size n";
  opt.y_label = "KL(theta_T)";
  opt.log_x = opt.log_y = true;
  return svg::render(opt, {pts, med, lo, hi});
}

inline CommandResult cmd_sample_run(const ExperimentConfig& c, std::ostream& out) {
  CommandResult res;
  const SimplexFrame frame = build_simplex(c.k, c.d);
  const MixtureSpec spec = make_mixture(c.weights());
  const ExpectationEngine engine(engine_config(c), frame);
  const Eigen::VectorXd theta0 = c.theta0_norm * frame.vertex(0);
  RateOptions ropts;
  ropts.init_radius = c.init_radius;
  const RateExperiment exp = run_rate_experiment(engine, frame, spec, theta0, c.n_grid, c.seeds, c.seed, ropts);
  auto meta = base_metadata(c, engine.fingerprint());
  meta.push_back("dataset_seeds: derive_seed(seed, \"dataset\", slot), slot = 0.." + std::to_string(c.seeds - 1));
  meta.push_back("weights: " + detail::weights_label(c.weights()));

  std::ostringstream cells;
  cells.precision(17);
  cells << "n,seed,T,final_kl,final_theta_norm\n";
  for (const auto& cell : exp.cells)
    cells << cell.n << ',' << cell.seed << ',' << cell.iterations << ',' << cell.final_kl << ','
          << cell.final_theta_norm << '\n';
  std::ostringstream agg;
  agg.precision(17);
  agg << "n,median_kl,q25,q75\n";
  for (const auto& s : exp.summaries) agg << s.n << ',' << s.median_kl << ',' << s.q25 << ',' << s.q75 << '\n';
  agg << "# fitted_slope: " << (exp.kl_fit ? io::format_double(exp.kl_fit->slope) : std::string("n/a")) << '\n';
  agg << "# fitted_theta_slope: " << (exp.theta_fit ? io::format_double(exp.theta_fit->slope) : std::string("n/a"))
      << '\n';

  const auto cells_path = c.out / "sample_rate.csv";
  const auto agg_path = c.out / "sample_rate_aggregate.csv";
  detail::write_output(res, cells_path, io::metadata_block(meta) + cells.str());
  detail::write_output(res, agg_path, io::metadata_block(meta) + agg.str());
  detail::write_output(res, c.out / "sample_rate.svg", detail::svg_file(meta, plot_rate(cells_path, agg_path)));

  for (const auto& s : exp.summaries)
    out << "n=" << s.n << "  median KL " << detail::fmt(s.median_kl, 4) << "  [q25 " << detail::fmt(s.q25, 4)
        << ", q75 " << detail::fmt(s.q75, 4) << "]\n";
  out << "fitted slope of log median KL vs log n: "
      << (exp.kl_fit ? detail::fmt(exp.kl_fit->slope, 4) : std::string("n/a")) << "\n";
  return res;
}

// ---------------------------------------------------------------------------
// lloyd

struct RegularityReport {
  double mean_radius = 0.0;
  double min_pairwise = 0.0;
  double max_pairwise = 0.0;
  double pairwise_spread = 0.0;  // (max - min) / mean pairwise distance
};

inline RegularityReport regularity(const Eigen::MatrixXd& centers) {
  RegularityReport r;
  const auto k = centers.cols();
  for (Eigen::Index j = 0; j < k; ++j) r.mean_radius += centers.col(j).norm() / static_cast<double>(k);
  std::vector<double> dists;
  for (Eigen::Index a = 0; a < k; ++a)
    for (Eigen::Index b = a + 1; b < k; ++b) dists.push_back((centers.col(a) - centers.col(b)).norm());
  r.min_pairwise = *std::min_element(dists.begin(), dists.end());
  r.max_pairwise = *std::max_element(dists.begin(), dists.end());
  double mean = 0.0;
  for (double x : dists) mean += x / static_cast<double>(dists.size());
  r.pairwise_spread = (r.max_pairwise - r.min_pairwise) / mean;
  return r;
}

inline std::string lloyd_verdict(int k, const RegularityReport& r, double tol = 0.07) {
  if (r.pairwise_spread > tol) return "irregular configuration";
  switch (k) {
    case 2: return "symmetric pair";
    case 3: return "near-equilateral triangle";
    case 4: return "near-regular tetrahedron";
    default: return "near-regular simplex";
  }
}

inline std::string plot_lloyd(const std::filesystem::path& points_csv, const std::filesystem::path& centers_csv,
                              int k, int d) {
  const auto pts = io::read_csv(points_csv);
  const auto ctr = io::read_csv(centers_csv);
  auto coord = [&](const io::CsvTable& t, int a) {
    return a < d ? t.values("x" + std::to_string(a + 1)) : std::vector<double>(t.rows.size(), 0.0);
  };
  const auto px = coord(pts, 0), py = coord(pts, 1), cluster = pts.values("cluster");
  std::vector<svg::Series> series;
  for (int j = 0; j < k; ++j) {
    svg::Series s;
    s.label = "cluster " + std::to_string(j + 1);
    s.line = false;
    s.markers = true;
    s.marker_radius = 1.5;
    s.opacity = 0.4;
    for (std::size_t i = 0; i < px.size(); ++i)
      if (static_cast<int>(cluster[i]) == j) {
        s.x.push_back(px[i]);
        s.y.push_back(py[i]);
      }
    series.push_back(std::move(s));
  }
  const auto cx = coord(ctr, 0), cy = coord(ctr, 1), kind = ctr.values("kind");
  svg::Series sample{"k-means centers", {}, {}, true, true, false, k > 2, 5.0, 1.0, "#000000"};
  svg::Series ref{"R0 simplex", {}, {}, true, true, true, k > 2, 4.0, 1.0, "#7f7f7f"};
  for (std::size_t i = 0; i < cx.size(); ++i) {
    auto& dst = kind[i] == 0 ? sample : ref;
    if (kind[i] == 0 || kind[i] == 2) {
      dst.x.push_back(cx[i]);
      dst.y.push_back(cy[i]);
    }
  }
  series.push_back(std::move(sample));
  series.push_back(std::move(ref));
  svg::PlotOptions opt;
  opt.title = "k-means on N(0, I): k=" + std::to_string(k) + ", d=" + std::to_string(d) +
              (d > 2 ? " (first two coordinates)" : "");
  opt.x_label = "x1";
  opt.y_label = d > 1 ? "x2" : "";
  opt.equal_aspect = d > 1;
  opt.width = 720;
  opt.height = 560;
  return svg::render(opt, series);
}

inline CommandResult cmd_lloyd(const ExperimentConfig& c, std::ostream& out) {
  CommandResult res;
  const SimplexFrame frame = build_simplex(c.k, c.d);
  const double r0 = population_lloyd_radius(c.d);
  const std::uint64_t data_seed = rng::derive_seed(c.seed, "lloyd-data");
  const Dataset data(c.lloyd_n, c.d, data_seed);
  LloydConfig lc;
  lc.k = c.k;
  lc.d = c.d;
  const KMeansResult km = run_sample_kmeans(lc, data);
  const RegularityReport reg = regularity(km.centers);

  const ExpectationEngine mc(EngineConfig::monte_carlo(c.mc_samples, c.seed), frame);
  const LloydUpdate pop = population_lloyd_update(frame, r0, mc);
  const OrbitFit orbit = em_init_from_kmeans(frame, km.centers);

  auto meta = base_metadata(c, mc.fingerprint());
  meta.push_back("dataset_seed: " + std::to_string(data_seed));
  meta.push_back("R0: " + io::format_double(r0));
  meta.push_back("kmeans_iterations: " + std::to_string(km.iterations));
  meta.push_back(std::string("kmeans_converged: ") + (km.converged ? "true" : "false"));
  meta.push_back("verdict: " + lloyd_verdict(c.k, reg));

  // kind: 0 sample k-means, 1 population update from R0 v_i, 2 reference R0 v_i.
  std::ostringstream centers;
  centers.precision(17);
  centers << "kind,center,radius";
  for (int a = 0; a < c.d; ++a) centers << ",x" << a + 1;
  centers << '\n';
  auto put = [&](int kind, const Eigen::MatrixXd& m) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      centers << kind << ',' << j + 1 << ',' << m.col(j).norm();
      for (int a = 0; a < c.d; ++a) centers << ',' << m(a, j);
      centers << '\n';
    }
  };
  put(0, km.centers);
  put(1, pop.centers);
  put(2, r0 * frame.vertices());

  std::ostringstream points;
  points.precision(17);
  points << "cluster";
  for (int a = 0; a < c.d; ++a) points << ",x" << a + 1;
  points << '\n';
  const auto shown = static_cast<Eigen::Index>(std::min<std::size_t>(c.lloyd_n, 3000));
  for (Eigen::Index i = 0; i < shown; ++i) {
    points << km.assignments[static_cast<std::size_t>(i)];
    for (int a = 0; a < c.d; ++a) points << ',' << data.samples()(i, a);
    points << '\n';
  }
  const auto centers_path = c.out / "lloyd_centers.csv";
  const auto points_path = c.out / "lloyd_points.csv";
  detail::write_output(res, centers_path, io::metadata_block(meta) + centers.str());
  detail::write_output(res, points_path, io::metadata_block(meta) + points.str());
  detail::write_output(res, c.out / "lloyd_scatter.svg",
                       detail::svg_file(meta, plot_lloyd(points_path, centers_path, c.k, c.d)));

  out << "k-means (n=" << c.lloyd_n << ", k=" << c.k << ", d=" << c.d << "): " << km.iterations << " iterations"
      << (km.converged ? "" : " (not converged)") << "\n";
  out << "  mean center radius " << detail::fmt(reg.mean_radius, 6) << " vs R0(d) = " << detail::fmt(r0, 6)
      << " (relative " << detail::fmt(reg.mean_radius / r0 - 1.0, 3) << ")\n";
  out << "  pairwise distances in [" << detail::fmt(reg.min_pairwise, 6) << ", " << detail::fmt(reg.max_pairwise, 6)
      << "], spread " << detail::fmt(reg.pairwise_spread, 3) << "\n";
  out << "  verdict: " << lloyd_verdict(c.k, reg) << "\n";
  out << "population Lloyd step from R0 v_i: mean radius " << detail::fmt(pop.mean_radius, 6) << ", max relative move "
      << detail::fmt(pop.max_relative_move, 3) << ", max angle " << detail::fmt(pop.max_angle, 3) << " rad\n";
  out << "EM start from centers: |theta| = " << detail::fmt(orbit.theta.norm(), 6) << ", orbit residual "
      << detail::fmt(orbit.residual, 4) << "\n";
  return res;
}

// ---------------------------------------------------------------------------
// verify

struct CheckResult {
  std::string name;
  std::string status;  // pass, fail, skipped
  double value = 0.0;
  double threshold = 0.0;
  std::string note;
};

inline std::vector<CheckResult> run_checks(const ExperimentConfig& c, std::string& engine_fp, bool& warning) {
  const SimplexFrame frame = build_simplex(c.k, c.d);
  const MixtureSpec spec = make_mixture(c.weights());
  const ExpectationEngine engine(engine_config(c), frame);
  engine_fp = engine.fingerprint();
  const bool gh = engine.mode() == EngineMode::gauss_hermite;
  warning = spec.degenerate;
  std::vector<CheckResult> out;
  auto add = [&](std::string name, bool ok, double value, double thr, std::string note = {}) {
    out.push_back({std::move(name), ok ? "pass" : "fail", value, thr, std::move(note)});
  };
  auto skip = [&](std::string name, std::string note) {
    out.push_back({std::move(name), "skipped", std::nan(""), std::nan(""), std::move(note)});
  };

  const FrameReport fr = check_frame(frame, 1e-10);
  add("frame", fr.pass,
      std::max({fr.unit_norm, fr.vertex_sum, fr.inner_product, fr.cyclic_shift, fr.orthogonality, fr.period}), 1e-10);

  const SpectralReport sp = spectral_report(frame, spec);
  std::vector<double> expected(static_cast<std::size_t>(c.d - c.k + 1), 1.0);
  expected.insert(expected.end(), sp.dft_moduli_sq.begin(), sp.dft_moduli_sq.end());
  std::sort(expected.begin(), expected.end());
  double spec_err = 0.0;
  for (std::size_t i = 0; i < expected.size(); ++i)
    spec_err = std::max(spec_err, std::abs(expected[i] - sp.eigenvalues[static_cast<Eigen::Index>(i)]));
  add("spectrum", spec_err <= 1e-10, spec_err, 1e-10);

  if (gh) {
    const JacobianReport jr = jacobian_check(engine, frame, spec);
    add("jacobian", jr.max_error <= 1e-4, jr.max_error, 1e-4);
    std::mt19937_64 gen(rng::derive_seed(c.seed, "gradient-probe"));
    double worst = 0.0;
    for (int p = 0; p < 20; ++p) {
      const Eigen::VectorXd theta = uniform_in_ball(gen, c.d, 0.5);
      const Eigen::VectorXd g = grad_neg_log_likelihood(engine, frame, spec, theta);
      worst = std::max(worst, (g - finite_difference_gradient(engine, frame, spec, theta)).norm());
    }
    add("gradient", worst <= 1e-5, worst, 1e-5);
  } else {
    skip("jacobian", "needs the quadrature engine");
    skip("gradient", "needs the quadrature engine");
  }

  {
    RunOptions opts;
    opts.max_iter = std::min(c.max_iter, 50);
    opts.kl_stop = c.kl_stop;
    opts.init_radius = c.init_radius;
    const EmTrace trace = run_population_em(engine, frame, spec, c.theta0_norm * frame.vertex(0), opts);
    double worst = -std::numeric_limits<double>::infinity();
    double eps = 0.0;
    for (std::size_t t = 1; t < trace.records.size(); ++t) {
      worst = std::max(worst, trace.records[t].kl - trace.records[t - 1].kl);
      eps = std::max(eps, gh ? kQuadratureNoiseFloor
                             : 3.0 * (trace.records[t].kl_std_error + trace.records[t - 1].kl_std_error));
    }
    if (trace.records.size() < 2)
      skip("descent", "trace stopped at t = 0");
    else
      add("descent", worst <= eps, worst, eps);
  }

  if (spec.degenerate) {
    skip("pl_inequality", "hypotheses violated");
    skip("contraction", "hypotheses violated");
  } else {
    const PlReport pl = pl_inequality_probe(engine, frame, spec, c.radius, c.probes, c.seed);
    add("pl_inequality", pl.pass, pl.min_margin, pl.tolerance);
    const ContractionReport cr = contraction_probe(engine, frame, spec, c.radius, c.probes, c.seed);
    add("contraction", cr.pass, cr.max_ratio, 1.0);
  }

  if (c.n_grid.size() < 2) {
    skip("perturbation_slope", "needs at least two sample sizes");
  } else {
    const PerturbationReport pr =
        perturbation_probe(engine, frame, spec, c.radius, c.n_grid, c.theta_grid, c.seeds, c.seed);
    add("perturbation_slope", std::abs(pr.fit->slope + 0.5) <= 0.1, pr.fit->slope, -0.5, "target -0.5 +/- 0.1");
  }
  return out;
}

inline CommandResult cmd_verify(const ExperimentConfig& c, std::ostream& out) {
  CommandResult res;
  std::string engine_fp;
  bool warning = false;
  const auto checks = run_checks(c, engine_fp, warning);
  auto meta = base_metadata(c, engine_fp);
  meta.push_back(std::string("warning: ") + (warning ? "hypotheses_violated" : "none"));
  std::ostringstream csv;
  csv.precision(17);
  csv << "check,status,value,threshold,note\n";
  bool failed = false;
  for (const auto& ch : checks) {
    csv << ch.name << ',' << ch.status << ',' << io::format_double(ch.value) << ','
        << io::format_double(ch.threshold) << ',' << ch.note << '\n';
    out << std::left << std::setw(20) << ch.name << std::setw(9) << ch.status;
    if (ch.status != "skipped") out << "value " << detail::fmt(ch.value, 4) << "  threshold " << detail::fmt(ch.threshold, 4);
    if (!ch.note.empty()) out << "  (" << ch.note << ")";
    out << "\n";
    if (ch.status == "fail") {
      failed = true;
    }
  }
  detail::write_output(res, c.out / "verify_summary.csv", io::metadata_block(meta) + csv.str());
  if (warning) out << "WARNING: weight DFT vanishes; hypotheses violated, PL and contraction checks skipped\n";
  for (const auto& ch : checks)
    if (ch.status == "fail") out << "FAILED: " << ch.name << "\n";
  res.exit_code = failed ? 1 : 0;
  return res;
}

// ---------------------------------------------------------------------------
// perturbation

inline std::string plot_perturbation(const std::filesystem::path& agg_csv) {
  const auto agg = io::read_csv(agg_csv);
  const auto radius = agg.values("radius"), n = agg.values("n"), med = agg.values("median");
  std::vector<svg::Series> series;
  std::vector<double> radii;
  for (double r : radius)
    if (std::find(radii.begin(), radii.end(), r) == radii.end()) radii.push_back(r);
  for (double r : radii) {
    svg::Series s;
    s.label = "r = " + detail::fmt(r, 3);
    s.markers = true;
    for (std::size_t i = 0; i < n.size(); ++i)
      if (radius[i] == r) {
        s.x.push_back(n[i]);
        s.y.push_back(med[i]);
      }
    series.push_back(std::move(s));
  }
  svg::PlotOptions opt;
  opt.title = "Grid sup |M_n - M| vs n (median over seeds)";
  opt.x_label = "sample size n";
  opt.y_label = "sup deviation";
  opt.log_x = opt.log_y = true;
  return svg::render(opt, series);
}

inline CommandResult cmd_perturbation(const ExperimentConfig& c, std::ostream& out) {
  CommandResult res;
  const SimplexFrame frame = build_simplex(c.k, c.d);
  const MixtureSpec spec = make_mixture(c.weights());
  const ExpectationEngine engine(engine_config(c), frame);
  std::vector<PerturbationReport> reps;
  for (double r : {c.radius, 2.0 * c.radius})
    reps.push_back(perturbation_probe(engine, frame, spec, r, c.n_grid, c.theta_grid, c.seeds, c.seed));

  auto meta = base_metadata(c, engine.fingerprint());
  meta.push_back("dataset_seeds: derive_seed(seed, \"dataset\", slot), slot = 0.." + std::to_string(c.seeds - 1));
  meta.push_back("weights: " + detail::weights_label(c.weights()));
  meta.push_back("grid_points: " + std::to_string(reps.front().grid_points));

  std::ostringstream cells, agg;
  cells.precision(17);
  agg.precision(17);
  cells << "radius,n,seed,sup_deviation\n";
  agg << "radius,n,median,q25,q75\n";
  for (const auto& rep : reps) {
    for (const auto& cell : rep.cells)
      cells << rep.radius << ',' << cell.n << ',' << cell.seed_slot << ',' << cell.sup_deviation << '\n';
    for (const auto& s : rep.summaries)
      agg << rep.radius << ',' << s.n << ',' << s.median << ',' << s.q25 << ',' << s.q75 << '\n';
  }
  for (const auto& rep : reps)
    agg << "# fitted_slope r=" << io::format_double(rep.radius) << ": "
        << (rep.fit ? io::format_double(rep.fit->slope) : std::string("n/a")) << '\n';
  for (std::size_t i = 0; i < reps[0].summaries.size(); ++i)
    agg << "# radius_doubling_ratio n=" << reps[0].summaries[i].n << ": "
        << io::format_double(reps[1].summaries[i].median / reps[0].summaries[i].median) << '\n';

  const auto agg_path = c.out / "perturbation_aggregate.csv";
  detail::write_output(res, c.out / "perturbation.csv", io::metadata_block(meta) + cells.str());
  detail::write_output(res, agg_path, io::metadata_block(meta) + agg.str());
  detail::write_output(res, c.out / "perturbation.svg", detail::svg_file(meta, plot_perturbation(agg_path)));

  for (const auto& rep : reps) {
    out << "r = " << detail::fmt(rep.radius, 4) << ":";
    for (const auto& s : rep.summaries) out << "  n=" << s.n << " median " << detail::fmt(s.median, 4);
    out << "\n  fitted slope " << (rep.fit ? detail::fmt(rep.fit->slope, 4) : std::string("n/a")) << "\n";
  }
  for (std::size_t i = 0; i < reps[0].summaries.size(); ++i)
    out << "radius doubling ratio at n=" << reps[0].summaries[i].n << ": "
        << detail::fmt(reps[1].summaries[i].median / reps[0].summaries[i].median, 4) << "\n";
  return res;
}

inline CommandResult run_command(const ExperimentConfig& c, std::ostream& out) {
  if (c.command == "spectrum") return cmd_spectrum(c, out);
  if (c.command == "population-run") return cmd_population_run(c, out);
  if (c.command == "sample-run") return cmd_sample_run(c, out);
  if (c.command == "lloyd") return cmd_lloyd(c, out);
  if (c.command == "verify") return cmd_verify(c, out);
  if (c.command == "perturbation") return cmd_perturbation(c, out);
  throw ConfigError("unknown command '" + c.command + "'");
}

}  // namespace overem::experiments
