#include <CLI11.hpp>

#include <iostream>
#include <map>
#include <string>

#include "overem/errors.hpp"
#include "overem/experiments.hpp"

namespace ex = overem::experiments;

namespace {

const std::map<std::string, std::string> kHelp = {
    {"k", "number of mixture components"},
    {"d", "ambient dimension (default k-1)"},
    {"weights", "mixing weights w1,w2,...; separate several sets with ';'"},
    {"theta0-norm", "norm of the EM starting point"},
    {"seed", "root seed"},
    {"engine", "expectation engine: gh, mc or auto"},
    {"mc-samples", "Monte Carlo sample count"},
    {"gh-nodes", "Gauss-Hermite nodes per axis"},
    {"out", "output directory"},
    {"max-iter", "population EM iteration cap"},
    {"kl-stop", "stop population EM once KL falls below this"},
    {"init-radius", "radius of the initialization ball"},
    {"gradient-step", "run gradient EM with this step instead of EM"},
    {"n-grid", "sample sizes n1,n2,..."},
    {"seeds", "dataset seeds per sample size"},
    {"radius", "probe radius for PL, contraction and perturbation checks"},
    {"theta-grid", "theta grid size for the perturbation sup"},
    {"probes", "random probes for PL and contraction checks"},
    {"lloyd-n", "sample size for k-means"},
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Overspecified Gaussian mixture EM experiments"};
  app.set_version_flag("--version", ex::kToolVersion);
  app.require_subcommand(1);
  app.fallthrough();

  std::map<std::string, std::string> raw;
  std::map<std::string, CLI::Option*> opts;
  for (const auto& [key, def] : ex::default_values()) {
    raw[key];
    opts[key] = app.add_option("--" + key, raw[key], kHelp.at(key));
  }
  std::string config_path;
  app.add_option("--config", config_path, "flat key = value config file")->check(CLI::ExistingFile);
  const std::map<std::string, std::string> about = {
      {"spectrum", "eigenvalues of A A^T, weight DFT and contraction bound"},
      {"population-run", "population EM traces of KL against iteration"},
      {"sample-run", "sample EM final KL against n over seeds"},
      {"lloyd", "k-means and population Lloyd update against the radial fixed point"},
      {"verify", "numerical identity checks with a pass/fail summary"},
      {"perturbation", "sup deviation of the sample EM operator against n and radius"},
  };
  for (const auto& name : ex::command_names()) app.add_subcommand(name, about.count(name) ? about.at(name) : "");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    std::map<std::string, std::string> file_values, cli_values;
    if (!config_path.empty()) file_values = ex::read_config_file(config_path);
    for (const auto& [key, opt] : opts)
      if (opt->count() > 0) cli_values[key] = raw[key];
    const ex::ExperimentConfig config =
        ex::resolve_config(app.get_subcommands().front()->get_name(), file_values, cli_values);
    const ex::CommandResult result = ex::run_command(config, std::cout);
    for (const auto& f : result.files) std::cout << "wrote " << f.string() << "\n";
    return result.exit_code;
  } catch (const overem::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
