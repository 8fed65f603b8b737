#include <gtest/gtest.h>

#include <filesystem>
#include <sstream>

#include "overem/csv.hpp"
#include "overem/errors.hpp"
#include "overem/experiments.hpp"

namespace ex = overem::experiments;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("overem_test_" + name);
  fs::remove_all(p);
  return p;
}

ex::ExperimentConfig config(const std::string& command, std::map<std::string, std::string> cli) {
  return ex::resolve_config(command, {}, cli);
}

}  // namespace

TEST(Config, DefaultsResolve) {
  const auto c = config("spectrum", {});
  EXPECT_EQ(c.k, 2);
  EXPECT_EQ(c.d, 1);
  ASSERT_EQ(c.weight_sets.size(), 1u);
  EXPECT_EQ(c.weights(), (std::vector<double>{0.7, 0.3}));
  EXPECT_EQ(c.resolved.at("d"), "1");
  EXPECT_EQ(config("population-run", {}).weight_sets.size(), 3u);
  EXPECT_EQ(config("perturbation", {}).seeds, 10);
  EXPECT_EQ(config("sample-run", {}).seeds, 20);
  EXPECT_EQ(config("sample-run", {}).n_grid, (std::vector<std::size_t>{1000, 10000, 100000}));
}

TEST(Config, PrecedenceCliOverFileOverDefault) {
  const auto file = ex::parse_config_text("# comment\nk = 3\nseed = 5\n\nweights = \"0.5,0.3,0.2\"\n");
  auto c = ex::resolve_config("spectrum", file, {{"seed", "9"}});
  EXPECT_EQ(c.k, 3);
  EXPECT_EQ(c.d, 2);
  EXPECT_EQ(c.seed, 9u);
  EXPECT_EQ(c.weights(), (std::vector<double>{0.5, 0.3, 0.2}));
  c = ex::resolve_config("spectrum", file, {});
  EXPECT_EQ(c.seed, 5u);
}

TEST(Config, RejectsBadInput) {
  EXPECT_THROW((void)ex::parse_config_text("colour = blue\n"), overem::ConfigError);
  EXPECT_THROW((void)ex::parse_config_text("k 3\n"), overem::ConfigError);
  EXPECT_THROW((void)config("spectrum", {{"k", "3"}, {"d", "1"}}), overem::ConfigError);
}

TEST(Config, RejectsBadValues) {
  const std::vector<std::map<std::string, std::string>> bad = {
      {{"k", "1"}},
      {{"k", "2.5"}},
      {{"weights", "0.7,0.4"}},
      {{"weights", "0.7,-0.3"}},
      {{"weights", "0.5,0.3,0.2"}},
      {{"engine", "fast"}},
      {{"k", "7"}, {"engine", "gh"}},
      {{"mc-samples", "1"}},
      {{"seed", "-1"}},
      {{"seed", "abc"}},
      {{"n-grid", "1000,0"}},
      {{"seeds", "0"}},
      {{"radius", "-0.1"}},
      {{"theta0-norm", "nan"}},
      {{"gradient-step", "0"}},
      {{"bogus", "1"}},
  };
  for (const auto& cli : bad) EXPECT_THROW((void)config("spectrum", cli), overem::ConfigError) << cli.begin()->first;
  EXPECT_THROW((void)config("launch", {}), overem::ConfigError);
}

TEST(Config, HashTracksResolvedValues) {
  const auto a = config("spectrum", {});
  const auto b = config("spectrum", {{"seed", "0"}});
  const auto c = config("spectrum", {{"seed", "1"}});
  EXPECT_EQ(ex::config_hash(a), ex::config_hash(b));
  EXPECT_NE(ex::config_hash(a), ex::config_hash(c));
  EXPECT_NE(ex::config_hash(a), ex::config_hash(config("verify", {})));
}

TEST(Csv, RoundTrip) {
  const auto t = overem::io::parse_csv("# a: 1\n# b: 2\nx,y,z\n1,2.5,\n3,nan,4\n# trailing: yes\n");
  EXPECT_EQ(t.metadata.size(), 3u);
  EXPECT_EQ(t.header, (std::vector<std::string>{"x", "y", "z"}));
  ASSERT_EQ(t.rows.size(), 2u);
  EXPECT_EQ(t.values("y")[0], 2.5);
  EXPECT_TRUE(std::isnan(t.values("z")[0]));
  EXPECT_TRUE(std::isnan(t.values("y")[1]));
  EXPECT_THROW((void)t.column("w"), std::out_of_range);
  EXPECT_EQ(overem::io::format_double(0.1), "0.10000000000000001");
}

TEST(Commands, SpectrumWritesMetadataAndBanner) {
  auto c = config("spectrum", {{"weights", "0.5,0.5"}, {"out", scratch_dir("spectrum").string()}});
  std::ostringstream out;
  const auto res = ex::run_command(c, out);
  EXPECT_EQ(res.exit_code, 0);
  EXPECT_NE(out.str().find("degenerate: theorem hypotheses violated"), std::string::npos);
  const auto t = overem::io::read_csv(c.out / "spectrum.csv");
  ASSERT_GE(t.metadata.size(), 6u);
  EXPECT_EQ(t.metadata[0], "tool: overem 0.1.0");
  EXPECT_EQ(t.metadata[1], "command: spectrum");
  EXPECT_EQ(t.metadata[2].rfind("config_hash: 0x", 0), 0u);
  EXPECT_EQ(t.metadata[4], "seed: 0");
  EXPECT_EQ(t.metadata[5].rfind("engine: ", 0), 0u);
}

TEST(Commands, SpectrumKappaAndCrossListing) {
  auto c = config("spectrum", {{"out", scratch_dir("spectrum2").string()}});
  std::ostringstream out;
  ex::run_command(c, out);
  EXPECT_NE(out.str().find("kappa bound = 0.96"), std::string::npos);
  c = config("spectrum", {{"k", "3"}, {"out", scratch_dir("spectrum3").string()}});
  std::ostringstream out3;
  ex::run_command(c, out3);
  EXPECT_NE(out3.str().find("lambda_min = 0.07  (min |dft|^2 = 0.07)"), std::string::npos);
}

TEST(Commands, PopulationRunIsDeterministicAndPlotsFromCsv) {
  const auto dir1 = scratch_dir("pop1"), dir2 = scratch_dir("pop2");
  std::ostringstream sink;
  const auto r1 = ex::run_command(config("population-run", {{"out", dir1.string()}}), sink);
  const auto r2 = ex::run_command(config("population-run", {{"out", dir2.string()}}), sink);
  ASSERT_EQ(r1.files.size(), r2.files.size());
  for (std::size_t i = 0; i < r1.files.size(); ++i) {
    if (r1.files[i].extension() != ".csv") continue;
    // Only the out entry (and so the hash) differs; everything after the echoed config must match.
    const auto a = overem::io::read_file(r1.files[i]);
    const auto b = overem::io::read_file(r2.files[i]);
    EXPECT_EQ(a.substr(a.find('\n', a.find("config: "))), b.substr(b.find('\n', b.find("config: "))));
  }
  // The plot is rebuilt from the trace files on disk.
  const auto traces = std::vector<fs::path>{dir1 / "population_trace_1.csv"};
  const std::string svg = ex::plot_population(traces, {"x"}, "t");
  EXPECT_NE(svg.find("<polyline"), std::string::npos);
  EXPECT_TRUE(fs::exists(dir1 / "population_kl.svg"));
}

TEST(Commands, ZeroStartGivesFlatCurve) {
  auto c = config("population-run", {{"theta0-norm", "0"}, {"weights", "0.7,0.3"},
                                     {"out", scratch_dir("pop0").string()}});
  std::ostringstream out;
  ex::run_command(c, out);
  const auto t = overem::io::read_csv(c.out / "population_trace_1.csv");
  ASSERT_EQ(t.rows.size(), 1u);
  EXPECT_EQ(t.values("kl")[0], 0.0);
}

TEST(Commands, SampleRunSingleSizeMarksSlopeUnavailable) {
  auto c = config("sample-run", {{"n-grid", "500"}, {"seeds", "3"}, {"out", scratch_dir("rate").string()}});
  std::ostringstream out;
  ex::run_command(c, out);
  const auto t = overem::io::read_csv(c.out / "sample_rate_aggregate.csv");
  EXPECT_EQ(t.header, (std::vector<std::string>{"n", "median_kl", "q25", "q75"}));
  EXPECT_EQ(t.metadata.back(), "fitted_theta_slope: n/a");
  EXPECT_NE(std::find(t.metadata.begin(), t.metadata.end(), "fitted_slope: n/a"), t.metadata.end());
  const auto cells = overem::io::read_csv(c.out / "sample_rate.csv");
  EXPECT_EQ(cells.header, (std::vector<std::string>{"n", "seed", "T", "final_kl", "final_theta_norm"}));
  EXPECT_EQ(cells.rows.size(), 3u);
}

TEST(Commands, LloydReportsVerdict) {
  auto c = config("lloyd", {{"k", "3"}, {"mc-samples", "200000"}, {"out", scratch_dir("lloyd").string()}});
  std::ostringstream out;
  ex::run_command(c, out);
  EXPECT_NE(out.str().find("verdict: near-equilateral triangle"), std::string::npos);
  const auto centers = overem::io::read_csv(c.out / "lloyd_centers.csv");
  EXPECT_EQ(centers.rows.size(), 9u);
  EXPECT_TRUE(fs::exists(c.out / "lloyd_scatter.svg"));
}

TEST(Commands, VerifyUniformSkipsWithWarning) {
  auto c = config("verify", {{"weights", "0.5,0.5"}, {"n-grid", "1000"}, {"out", scratch_dir("verify").string()}});
  std::ostringstream out;
  const auto res = ex::run_command(c, out);
  EXPECT_EQ(res.exit_code, 0);
  EXPECT_NE(out.str().find("WARNING"), std::string::npos);
  const std::string csv = overem::io::read_file(c.out / "verify_summary.csv");
  EXPECT_NE(csv.find("pl_inequality,skipped"), std::string::npos);
  EXPECT_NE(csv.find("contraction,skipped"), std::string::npos);
  EXPECT_NE(csv.find("# warning: hypotheses_violated"), std::string::npos);
}

TEST(Commands, VerifyIsIdempotent) {
  auto c = config("verify", {{"k", "3"}, {"probes", "20"}, {"n-grid", "1000"}, {"out", scratch_dir("verify2").string()}});
  std::ostringstream out;
  ex::run_command(c, out);
  const std::string first = overem::io::read_file(c.out / "verify_summary.csv");
  ex::run_command(c, out);
  EXPECT_EQ(first, overem::io::read_file(c.out / "verify_summary.csv"));
}

TEST(Svg, RendersSeriesAndSkipsNonPositiveOnLogAxis) {
  overem::svg::Series s;
  s.label = "curve";
  s.x = {1, 2, 3};
  s.y = {1.0, 0.0, 0.1};
  overem::svg::PlotOptions o;
  o.log_y = true;
  const std::string out = overem::svg::render(o, {s});
  EXPECT_EQ(out.rfind("<svg", 0), 0u);
  EXPECT_NE(out.find("curve"), std::string::npos);
  const auto pl = out.find("points=\"");
  const auto end = out.find('"', pl + 8);
  const std::string pts = out.substr(pl + 8, end - pl - 8);
  EXPECT_EQ(std::count(pts.begin(), pts.end(), ','), 2);
}

TEST(Io, AtomicWriteReplacesFile) {
  const auto dir = scratch_dir("atomic");
  overem::io::atomic_write(dir / "a.txt", "one");
  overem::io::atomic_write(dir / "a.txt", "two");
  EXPECT_EQ(overem::io::read_file(dir / "a.txt"), "two");
  EXPECT_FALSE(fs::exists(dir / "a.txt.tmp"));
}
