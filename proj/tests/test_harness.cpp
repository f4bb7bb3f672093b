#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "surrogate/config.hpp"
#include "surrogate/errors.hpp"
#include "surrogate/estimators.hpp"
#include "surrogate/harness.hpp"

#include <algorithm>
#include <cstring>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

using namespace surrogate;

namespace {

ScenarioConfig small_scenario(std::vector<EstimatorPipeline> estimators, std::size_t reps = 3) {
  ScenarioConfig sc;
  sc.dgp.n_exp = 60;
  sc.dgp.n_obs = 80;
  sc.estimators = std::move(estimators);
  sc.replications = reps;
  sc.options.forest = fast_forest_params();
  sc.options.forest.num_trees = 20;
  return sc;
}

EstimatorPipeline stub(std::string name, double offset) {
  return custom_pipeline(std::move(name), [offset](const PipelineContext& ctx) { return ctx.truth() + offset; });
}

std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string line; std::getline(in, line);) out.push_back(line);
  return out;
}

std::string message_of(const auto& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.what();
  }
  return {};
}

GroundTruth ground_truth(Index n, std::uint64_t seed) {
  DgpConfig cfg;
  cfg.seed = seed;
  return make_ground_truth(cfg, n, 2);
}

}  // namespace

TEST_CASE("stub estimators give exact MSE") {
  const MseRow row = run_scenario(small_scenario({stub("exact", 0.0), stub("plus_one", 1.0)}));
  CHECK(row.results.at("exact").mse == 0.0);
  CHECK(row.results.at("plus_one").mse == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(row.results.at("plus_one").mean == doctest::Approx(row.mc_estimate + 1.0));
  CHECK(row.winner == "exact");
  CHECK(row.mc_estimate == cached_oracle_tau_p(row.dgp));
}

TEST_CASE("winner ties go to the lexicographically smallest name") {
  CHECK(pick_winner({{"b", 0.5}, {"a", 0.5}, {"c", 0.7}}) == "a");
  CHECK(pick_winner({{"b", 0.2}, {"a", std::nan("")}}) == "b");
  CHECK(pick_winner({}).empty());
}

TEST_CASE("real pipelines are deterministic across worker counts") {
  ScenarioConfig sc = small_scenario({builtin_pipeline("grf_surrogate", 0.0), builtin_pipeline("imputation", 0.0),
                                      builtin_pipeline("kallus_surrogate", 0.0)},
                                     4);
  sc.workers = 1;
  const MseRow one = run_scenario(sc);
  sc.workers = 3;
  const MseRow three = run_scenario(sc);
  for (const auto& [name, summary] : one.results) {
    CAPTURE(name);
    const auto& other = three.results.at(name);
    REQUIRE(summary.estimates.size() == 4);
    for (std::size_t r = 0; r < 4; ++r) CHECK(std::memcmp(&summary.estimates[r], &other.estimates[r], sizeof(double)) == 0);
    CHECK(summary.mse == other.mse);
  }

  SUBCASE("winner is the argmin of the emitted MSE map") {
    std::string best;
    double best_mse = INFINITY;
    for (const auto& [name, summary] : one.results)
      if (summary.mse < best_mse) best = name, best_mse = summary.mse;
    CHECK(one.winner == best);
  }
  SUBCASE("each replication depends only on its own index") {
    // A shorter run reproduces the prefix, so permuting indices permutes estimates.
    sc.replications = 2;
    const MseRow prefix = run_scenario(sc);
    for (const auto& [name, summary] : prefix.results)
      for (std::size_t r = 0; r < 2; ++r) CHECK(summary.estimates[r] == one.results.at(name).estimates[r]);
  }
}

TEST_CASE("aggregation is symmetric in the replication order") {
  std::vector<double> estimates{1.2, 0.7, std::nan(""), 2.5, 1.9};
  std::map<std::string, std::vector<double>> forward{{"x", estimates}};
  std::reverse(estimates.begin(), estimates.end());
  std::rotate(estimates.begin(), estimates.begin() + 2, estimates.end());
  std::map<std::string, std::vector<double>> shuffled{{"x", estimates}};
  const auto a = summarize(forward, 1.5).at("x");
  const auto b = summarize(shuffled, 1.5).at("x");
  CHECK(a.mse == doctest::Approx(b.mse).epsilon(1e-15));
  CHECK(a.mean == doctest::Approx(b.mean).epsilon(1e-15));
  CHECK(a.successes == 4);
  CHECK(a.exclusions == 1);
  CHECK(a.mse == doctest::Approx((0.09 + 0.64 + 1.0 + 0.16) / 4));
}

TEST_CASE("failed replications are excluded and counted") {
  const auto flaky = custom_pipeline("flaky", [](const PipelineContext& ctx) {
    if (ctx.exp().surrogate[0] > 0.0) throw EstimationError("first surrogate positive");
    return ctx.truth();
  });
  const MseRow row = run_scenario(small_scenario({flaky, stub("steady", 0.5)}, 12));
  const auto& s = row.results.at("flaky");
  CHECK(s.successes + s.exclusions == 12);
  CHECK(s.exclusions > 0);
  CHECK(s.successes > 0);
  CHECK(s.first_error == "first surrogate positive");
  CHECK(s.mse == 0.0);
  std::size_t nan_count = 0;
  for (double v : s.estimates) nan_count += std::isnan(v) ? 1 : 0;
  CHECK(nan_count == s.exclusions);
  CHECK(row.results.at("steady").exclusions == 0);

  std::ostringstream csv;
  write_table_csv(csv, {row});
  CHECK(csv.str().find("flaky:" + std::to_string(s.exclusions)) != std::string::npos);
}

TEST_CASE("scenario validation") {
  ScenarioConfig sc = small_scenario({});
  CHECK_THROWS_WITH_AS(sc.validate(), "estimator list is empty", ConfigError);
  sc = small_scenario({stub("a", 0), stub("a", 1)});
  CHECK_THROWS_AS(sc.validate(), ConfigError);
  sc = small_scenario({builtin_pipeline("imputation", 1.0)});
  sc.dgp.omega = 1.0;
  CHECK(message_of([&] { sc.validate(); }).find("unconfounded") != std::string::npos);
  sc = small_scenario({builtin_pipeline("kallus_surrogate", 1.0)});
  sc.dgp.omega = 1.0;
  CHECK_THROWS_AS(sc.validate(), ConfigError);
  sc = small_scenario({stub("a", 0)}, 0);
  CHECK_THROWS_AS(sc.validate(), ConfigError);
}

TEST_CASE("table output") {
  SUBCASE("empty grid writes only the header") {
    std::ostringstream out;
    write_table_csv(out, {});
    const auto lines = lines_of(out.str());
    REQUIRE(lines.size() == 1);
    CHECK(lines[0] == "omega,kappa_tau,additive,nuisance,support,mc_estimate,winner,exclusions");
  }
  SUBCASE("two scenarios keep grid order") {
    ScenarioConfig a = small_scenario({stub("s", 0.25)}, 2);
    ScenarioConfig b = a;
    b.dgp.kappa_tau = 4;
    b.dgp.support = Support::Shifted;
    const auto path = std::filesystem::temp_directory_path() / "surrogate_table_test.csv";
    const auto rows = run_table({a, b}, path);
    std::ifstream in(path);
    std::stringstream text;
    text << in.rdbuf();
    const auto lines = lines_of(text.str());
    REQUIRE(lines.size() == 3);
    CHECK(lines[0] == "omega,kappa_tau,additive,nuisance,support,mc_estimate,mse_s,winner,exclusions");
    CHECK(lines[1].rfind("0,2,", 0) == 0);
    CHECK(lines[2].rfind("0,4,", 0) == 0);
    CHECK(lines[2].find("shifted") != std::string::npos);
    CHECK(rows[1].mc_estimate > rows[0].mc_estimate);
    std::filesystem::remove(path);
  }
  SUBCASE("unwritable path") {
    CHECK_THROWS_AS(run_table({}, "/nonexistent-dir/x/table.csv"), ConfigError);
  }
}

TEST_CASE("table presets") {
  const EstimatorOptions options;
  const auto t1 = preset_grid("table1", 10, 1, options);
  REQUIRE(t1.size() == 8);
  std::set<std::tuple<int, bool, bool, Support>> knobs;
  for (const auto& sc : t1) {
    CHECK(sc.dgp.omega == 0.0);
    CHECK(sc.replications == 10);
    CHECK(sc.dgp.support != Support::Contained);
    CHECK(sc.estimators.size() == 3);
    knobs.insert({sc.dgp.kappa_tau, sc.dgp.additive, sc.dgp.nuisance, sc.dgp.support});
  }
  CHECK(knobs.size() == 8);
  CHECK(t1.front().dgp.kappa_tau == 2);
  CHECK(t1.front().dgp.additive);
  CHECK(t1.front().dgp.nuisance);
  CHECK(t1.front().dgp.support == Support::Identical);

  const auto t2 = preset_grid("table2", 10, 1, options);
  CHECK(t2.size() == 12);
  for (const auto& sc : t2) CHECK_NOTHROW(sc.validate());
  const auto t3 = preset_grid("table3", 10, 1, options);
  CHECK(t3.size() == 12);
  for (const auto& sc : t3) {
    CHECK(sc.dgp.support == Support::Contained);
    CHECK_NOTHROW(sc.validate());
  }
  CHECK(t1[0].base_seed != t1[1].base_seed);
  CHECK_THROWS_AS(preset_grid("table9", 10, 1, options), ConfigError);
}

TEST_CASE("full causal-forest pipeline on the baseline design") {
  // 200 replications with 50-tree forests; the reference MSE is 0.19.
  ScenarioConfig sc;
  sc.estimators = {builtin_pipeline("grf_surrogate", 0.0)};
  sc.replications = 200;
  sc.options.forest = fast_forest_params();
  sc.base_seed = 2024;
  const MseRow row = run_scenario(sc);
  const double mse = row.results.at("grf_surrogate").mse;
  MESSAGE("grf_surrogate MSE " << mse);
  CHECK(mse >= 0.05);
  CHECK(mse <= 0.6);
}

TEST_CASE("biased subsample") {
  const GroundTruth truth = ground_truth(12000, 3);
  const SubsampleDraw d = biased_subsample(truth, 300, 1000, 17);
  REQUIRE(d.exp.rows() == 300);
  REQUIRE(d.obs.rows() == 1000);
  CHECK_FALSE(d.exp.primary.has_value());
  CHECK(d.obs.primary.has_value());

  const auto& s = truth.sample;
  auto loc = [&](Index i) { return truth.location[static_cast<std::size_t>(i)]; };
  for (Index r : d.exp_rows) CHECK(loc(r) == 1);

  // Lower median of treated surrogates per stratum over the full table.
  double median[2];
  for (int a = 0; a < 2; ++a) {
    std::vector<double> ys;
    for (Index i = 0; i < s.rows(); ++i)
      if (s.treatment[i] == 1.0 && loc(i) == (a == 0 ? 1 : 0)) ys.push_back(s.surrogate[i]);
    std::sort(ys.begin(), ys.end());
    median[a] = ys[(ys.size() - 1) / 2];
  }
  int cells[4] = {0, 0, 0, 0};
  for (Index r : d.obs_rows) {
    const int a = loc(r) ? 0 : 1;
    const bool treated = s.treatment[r] == 1.0;
    ++cells[2 * a + (treated ? 1 : 0)];
    if (treated) CHECK(s.surrogate[r] <= median[a]);
  }
  for (int c : cells) CHECK(c == 250);

  std::set<Index> exp_rows(d.exp_rows.begin(), d.exp_rows.end());
  CHECK(exp_rows.size() == 300);
  std::set<Index> obs_rows(d.obs_rows.begin(), d.obs_rows.end());
  CHECK(obs_rows.size() == 1000);
  for (Index r : d.obs_rows) CHECK(exp_rows.count(r) == 0);

  const SubsampleDraw again = biased_subsample(truth, 300, 1000, 17);
  CHECK(again.obs_rows == d.obs_rows);

  SUBCASE("quota errors") {
    CHECK_THROWS_AS(biased_subsample(truth, 300, 1002, 1), ConfigError);
    const std::string msg = message_of([&] { biased_subsample(truth, 300, 8000, 1); });
    CHECK(msg.find("stratum '") != std::string::npos);
  }
}

TEST_CASE("semi-synthetic runs") {
  const GroundTruth truth = ground_truth(4000, 4);
  SemiSyntheticConfig cfg;
  cfg.sizes = {{100, 200}, {150, 400}};
  cfg.replications = 3;
  cfg.estimators = {custom_pipeline("oracle", [](const PipelineContext& ctx) { return ctx.truth(); }),
                    custom_pipeline("obs_dim", [](const PipelineContext& ctx) {
                      return static_cast<double>(ctx.obs().rows());
                    })};
  const auto rows = run_semi_synthetic(truth, cfg);
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].results.at("oracle").mse == 0.0);
  CHECK(rows[1].results.at("obs_dim").mean == 400.0);
  CHECK(rows[0].truth == doctest::Approx(diff_in_means(truth.sample, Outcome::Primary).value));

  std::ostringstream csv;
  write_semi_synthetic_csv(csv, rows);
  const auto lines = lines_of(csv.str());
  REQUIRE(lines.size() == 3);
  CHECK(lines[0] == "n_exp,n_obs,truth,mse_oracle,mse_obs_dim,mean_oracle,mean_obs_dim,winner,exclusions");
  CHECK(lines[1].rfind("100,200,", 0) == 0);

  const auto names = semi_synthetic_estimators();
  REQUIRE(names.size() == 3);
  CHECK(names[0].name == "grf_surrogate");
  CHECK(names[1].name == "imputation");
  CHECK(names[2].name == "aipw");
  CHECK(parse_sizes("300:1000,200:1500,500:2000") == SemiSyntheticConfig{}.sizes);
  CHECK_THROWS_AS(parse_sizes("300-1000"), ConfigError);
}

TEST_CASE("scenario config files") {
  std::istringstream text(R"(# knob settings
omega = 1
kappa_tau = 4
additive = no
nuisance = false
support = contained
replications = 7
seed = 99
num_trees = 30
estimators = grf_surrogate, kallus_iv_surrogate, two_step
pipeline.two_step = instrumental_forest(exp) + robinson(obs) + estimate_ate
)");
  const ScenarioConfig sc = parse_scenario_config(text, "s.cfg");
  CHECK(sc.dgp.omega == 1.0);
  CHECK(sc.dgp.kappa_tau == 4);
  CHECK_FALSE(sc.dgp.additive);
  CHECK_FALSE(sc.dgp.nuisance);
  CHECK(sc.dgp.support == Support::Contained);
  CHECK(sc.replications == 7);
  CHECK(sc.base_seed == 99);
  CHECK(sc.options.forest.num_trees == 30);
  REQUIRE(sc.estimators.size() == 3);
  CHECK(sc.estimators[2].name == "two_step");

  std::istringstream defaults("omega = 0\n");
  const ScenarioConfig d = parse_scenario_config(defaults);
  REQUIRE(d.estimators.size() == 3);
  CHECK(d.estimators[1].name == "imputation");

  std::istringstream unknown("omega = 0\ncolour = blue\n");
  CHECK(message_of([&] { parse_scenario_config(unknown, "s.cfg"); }) == "s.cfg:2: unknown key 'colour'");
  std::istringstream invalid("omega = 1\nestimators = imputation\n");
  CHECK_THROWS_AS(parse_scenario_config(invalid), ConfigError);
  std::istringstream bad_pipeline("pipeline.p = causal_forest(exp) + bridge(obs\n");
  CHECK(message_of([&] { parse_scenario_config(bad_pipeline, "s.cfg"); }).rfind("s.cfg:1: ", 0) == 0);
  std::istringstream no_equals("omega 1\n");
  CHECK_THROWS_AS(parse_scenario_config(no_equals), ConfigError);
}

TEST_CASE("pipeline compositions") {
  CHECK_THROWS_AS(parse_pipeline("p", "causal_forest(exp) + bridge(obs)"), ConfigError);
  CHECK_THROWS_AS(parse_pipeline("p", "no_such_term(exp) + estimate_ate"), ConfigError);
  CHECK_THROWS_AS(builtin_pipeline("unknown", 0.0), ConfigError);
  CHECK(builtin_pipeline("kallus_surrogate", 0.0).requires_unconfounded);
  CHECK_FALSE(builtin_pipeline("grf_surrogate", 1.0).requires_unconfounded);
  CHECK(builtin_pipeline("grf_surrogate", 0.0).expression != builtin_pipeline("grf_surrogate", 1.0).expression);
}
