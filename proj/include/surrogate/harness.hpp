#pragma once

#include "surrogate/data_model.hpp"
#include "surrogate/dgp.hpp"
#include "surrogate/pipeline.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <utility>
#include <vector>

namespace surrogate {

/// Worker count from BENCH_WORKERS (0 or unset = auto).
std::size_t workers_from_env();

struct ScenarioConfig {
  DgpConfig dgp;
  std::vector<EstimatorPipeline> estimators;
  std::size_t replications = 200;
  std::uint64_t base_seed = 1;
  EstimatorOptions options;
  /// Replications run concurrently on this many threads (0 = auto).
  std::size_t workers = 1;

  void validate() const;
};

/// Per-estimator outcome over all replications.
struct EstimatorSummary {
  double mse = 0.0;
  double mean = 0.0;
  std::size_t successes = 0;
  std::size_t exclusions = 0;
  /// One entry per replication index; NaN where the estimator failed.
  std::vector<double> estimates;
  /// First error message seen, if any.
  std::string first_error;
};

struct MseRow {
  DgpConfig dgp;
  double mc_estimate = 0.0;
  std::vector<std::string> estimator_names;
  std::map<std::string, EstimatorSummary> results;
  std::string winner;
};

/// argmin of the finite entries; ties go to the lexicographically smallest name.
std::string pick_winner(const std::map<std::string, double>& mse);

/// Replication r: world seed derive_seed(base_seed, r), estimators evaluated
/// on a shared per-replication context. Failed estimates are excluded and
/// counted, never dropped silently.
MseRow run_scenario(const ScenarioConfig& scenario);

/// Aggregates an estimates table (estimator -> per-replication values, NaN
/// for failures) against `truth`.
std::map<std::string, EstimatorSummary> summarize(const std::map<std::string, std::vector<double>>& estimates,
                                                  double truth);

/// Columns: omega, kappa_tau, additive, nuisance, support, mc_estimate,
/// mse_<name>..., winner, exclusions.
void write_table_csv(std::ostream& out, const std::vector<MseRow>& rows);
void render_table(std::ostream& out, const std::vector<MseRow>& rows);

std::vector<MseRow> run_table(const std::vector<ScenarioConfig>& grid, const std::filesystem::path& out_path);

/// Knob grids of the three simulation tables ("table1", "table2", "table3").
/// Estimators: table1 grf_surrogate, imputation, kallus_surrogate; table2
/// grf_surrogate, kallus_iv_surrogate; table3 the omega-appropriate pair.
std::vector<ScenarioConfig> preset_grid(const std::string& name, std::size_t replications, std::uint64_t seed,
                                        const EstimatorOptions& options);

/// Forest settings of the fast CI preset (50 trees).
ForestParams fast_forest_params();

// ---- semi-synthetic protocol ------------------------------------------------

struct SubsampleDraw {
  LabeledSample exp;
  LabeledSample obs;
  std::vector<Index> exp_rows;
  std::vector<Index> obs_rows;
};

/// Experimental sample: n_exp stratum-A units (primary dropped). Observational
/// sample: four quotas of n_obs / 4 drawn without replacement from stratum-A
/// controls, stratum-A treated with surrogate at or below the stratum's
/// treated median, stratum-B controls and stratum-B treated below their
/// median; no unit appears in both samples.
SubsampleDraw biased_subsample(const GroundTruth& truth, Index n_exp, Index n_obs, std::uint64_t seed);

struct SemiSyntheticRow {
  Index n_exp = 0;
  Index n_obs = 0;
  double truth = 0.0;
  std::vector<std::string> estimator_names;
  std::map<std::string, EstimatorSummary> results;
  std::string winner;
};

struct SemiSyntheticConfig {
  std::vector<std::pair<Index, Index>> sizes{{300, 1000}, {200, 1500}, {500, 2000}};
  std::size_t replications = 100;
  std::uint64_t seed = 1;
  std::vector<EstimatorPipeline> estimators;
  EstimatorOptions options;
  std::size_t workers = 1;
};

/// Default semi-synthetic estimators: grf_surrogate, imputation, aipw.
std::vector<EstimatorPipeline> semi_synthetic_estimators();

/// Truth is the full table's difference in means of the primary outcome.
std::vector<SemiSyntheticRow> run_semi_synthetic(const GroundTruth& truth, const SemiSyntheticConfig& config);

/// Columns: n_exp, n_obs, truth, mse_<name>..., mean_<name>..., winner, exclusions.
void write_semi_synthetic_csv(std::ostream& out, const std::vector<SemiSyntheticRow>& rows);
void render_semi_synthetic(std::ostream& out, const std::vector<SemiSyntheticRow>& rows);

/// Parses "300:1000,200:1500".
std::vector<std::pair<Index, Index>> parse_sizes(const std::string& text);

}  // namespace surrogate
