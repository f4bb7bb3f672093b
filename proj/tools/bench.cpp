// bench: simulation tables, scenario files, semi-synthetic runs and oracles.
#include "surrogate/config.hpp"
#include "surrogate/dgp.hpp"
#include "surrogate/errors.hpp"
#include "surrogate/harness.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iomanip>
#include <iostream>

namespace {

using namespace surrogate;

void apply_common(EstimatorOptions& options, bool fast, bool no_intercept) {
  if (fast) options.forest = fast_forest_params();
  if (no_intercept) options.calibration.intercept = false;
}

std::ofstream open_output(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write '" + path + "'");
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Surrogate-outcome ATE benchmark harness"};
  app.require_subcommand(1);

  bool fast = false, no_intercept = false;
  std::size_t reps = 0;
  std::uint64_t seed = 1;
  std::string out_path, config_path;

  auto* run = app.add_subcommand("run", "Run a simulation table preset");
  std::string preset;
  run->add_option("--preset", preset, "table1, table2 or table3")->required();
  run->add_option("--reps", reps, "Replications per row (default 200)");
  run->add_option("--seed", seed, "Base seed");
  run->add_option("--out", out_path, "CSV output path")->required();
  run->add_flag("--fast", fast, "50-tree forests");
  run->add_flag("--no-intercept", no_intercept, "Calibrations without intercept");

  auto* scenario = app.add_subcommand("scenario", "Run one scenario described by a config file");
  scenario->add_option("--config", config_path)->required()->check(CLI::ExistingFile);
  scenario->add_option("--out", out_path, "CSV output path")->required();
  scenario->add_flag("--fast", fast, "50-tree forests");
  scenario->add_flag("--no-intercept", no_intercept, "Calibrations without intercept");

  auto* semi = app.add_subcommand("semisynthetic", "Biased-subsampling benchmark on a ground-truth table");
  std::string data_path, schema_path, sizes = "300:1000,200:1500,500:2000";
  semi->add_option("--data", data_path, "Ground-truth CSV")->required()->check(CLI::ExistingFile);
  semi->add_option("--schema", schema_path, "Column roles")->required()->check(CLI::ExistingFile);
  semi->add_option("--sizes", sizes, "n_exp:n_obs pairs");
  std::string semi_preset;
  semi->add_option("--preset", semi_preset, "star-full: 500 replications per size pair")
      ->check(CLI::IsMember({"star-full"}));
  semi->add_option("--reps", reps, "Replications per size pair (default 100)");
  semi->add_option("--seed", seed, "Base seed");
  semi->add_option("--out", out_path, "CSV output path")->required();
  semi->add_flag("--fast", fast, "50-tree forests");

  auto* oracle = app.add_subcommand("oracle", "Monte Carlo primary-outcome ATE of a scenario");
  Index draws = kOracleDraws;
  oracle->add_option("--config", config_path)->required()->check(CLI::ExistingFile);
  oracle->add_option("--draws", draws, "Monte Carlo draws");

  auto* world = app.add_subcommand("world", "Write one simulated experimental/observational pair as CSV");
  std::string exp_path, obs_path;
  world->add_option("--config", config_path)->required()->check(CLI::ExistingFile);
  world->add_option("--exp", exp_path, "Experimental CSV")->required();
  world->add_option("--obs", obs_path, "Observational CSV")->required();

  auto* ground = app.add_subcommand("groundtruth", "Write a simulated ground-truth table for semisynthetic runs");
  Index rows = 20000;
  int location = 2;
  std::string schema_out;
  ground->add_option("--config", config_path)->required()->check(CLI::ExistingFile);
  ground->add_option("--rows", rows, "Table size");
  ground->add_option("--location", location, "0-based covariate whose sign sets the stratum");
  ground->add_option("--out", out_path, "CSV output path")->required();
  ground->add_option("--schema-out", schema_out, "Matching schema file")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) {
      EstimatorOptions options;
      apply_common(options, fast, no_intercept);
      auto grid = preset_grid(preset, reps ? reps : 200, seed, options);
      const std::size_t workers = workers_from_env();
      for (auto& sc : grid) sc.workers = workers;
      const auto table = run_table(grid, out_path);
      render_table(std::cout, table);
    } else if (*scenario) {
      ScenarioConfig sc = load_scenario_config(config_path);
      apply_common(sc.options, fast, no_intercept);
      const auto table = run_table({sc}, out_path);
      render_table(std::cout, table);
      for (const auto& [name, s] : table.front().results)
        if (!s.first_error.empty()) std::cerr << name << ": " << s.exclusions << " excluded, e.g. " << s.first_error << '\n';
    } else if (*semi) {
      const GroundTruth truth = load_ground_truth(data_path, load_schema(schema_path));
      SemiSyntheticConfig cfg;
      cfg.sizes = parse_sizes(sizes);
      if (semi_preset == "star-full") cfg.replications = 500;
      if (reps) cfg.replications = reps;
      cfg.seed = seed;
      cfg.workers = workers_from_env();
      apply_common(cfg.options, fast, false);
      const auto result = run_semi_synthetic(truth, cfg);
      auto out = open_output(out_path);
      write_semi_synthetic_csv(out, result);
      render_semi_synthetic(std::cout, result);
    } else if (*oracle) {
      DgpConfig dgp = load_scenario_config(config_path).dgp;
      dgp.seed = kOracleSeed;
      const OracleResult r = oracle_tau_p(dgp, draws);
      std::cout << std::setprecision(6) << "mc_estimate " << r.value << "  std_error " << r.std_error << '\n';
    } else if (*world) {
      const ScenarioConfig sc = load_scenario_config(config_path);
      DgpConfig dgp = sc.dgp;
      dgp.seed = sc.base_seed;
      const WorldDraw w = draw_world(dgp, 0.0);
      save_csv(exp_path, w.exp);
      save_csv(obs_path, w.obs);
    } else if (*ground) {
      const ScenarioConfig sc = load_scenario_config(config_path);
      DgpConfig dgp = sc.dgp;
      dgp.seed = sc.base_seed;
      const GroundTruth truth = make_ground_truth(dgp, rows, location);
      auto out = open_output(out_path);
      write_ground_truth(out, truth);
      auto schema = open_output(schema_out);
      write_schema(schema, schema_for(truth.sample, true));
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
