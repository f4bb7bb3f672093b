#pragma once

#include "surrogate/harness.hpp"

#include <filesystem>
#include <iosfwd>
#include <string>

namespace surrogate {

/// Flat `key = value` scenario file; `#` starts a comment. Recognised keys:
///   omega, kappa_tau, additive, nuisance, support, p, n_exp, n_obs, seed,
///   replications, estimators (comma list), pipeline.<name> (composition),
///   num_trees, subsample_fraction, min_leaf_size, split_candidates,
///   honesty_fraction, stabilize_splits, e_exp (forest | number), intercept,
///   workers.
/// Unknown keys are errors. Without `estimators`, omega == 0 selects
/// grf_surrogate, imputation, kallus_surrogate and omega != 0 selects
/// grf_surrogate, kallus_iv_surrogate. `workers` defaults to BENCH_WORKERS.
ScenarioConfig parse_scenario_config(std::istream& in, const std::string& origin = "config");
ScenarioConfig load_scenario_config(const std::filesystem::path& path);

bool parse_bool(const std::string& text);

}  // namespace surrogate
