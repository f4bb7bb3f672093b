#include "surrogate/harness.hpp"

#include "surrogate/errors.hpp"
#include "surrogate/parallel.hpp"
#include "surrogate/random.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <limits>
#include <ostream>
#include <set>
#include <sstream>

namespace surrogate {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::string format_number(double v, int precision = 6) {
  if (!std::isfinite(v)) return "";
  std::ostringstream out;
  out << std::setprecision(precision) << v;
  return out.str();
}

std::vector<std::string> union_of_names(const std::vector<std::vector<std::string>>& lists) {
  std::vector<std::string> out;
  for (const auto& list : lists)
    for (const auto& name : list)
      if (std::find(out.begin(), out.end(), name) == out.end()) out.push_back(name);
  return out;
}

std::string exclusion_text(const std::vector<std::string>& names,
                           const std::map<std::string, EstimatorSummary>& results) {
  std::string out;
  for (const auto& name : names) {
    if (!out.empty()) out += ';';
    out += name + ":" + std::to_string(results.at(name).exclusions);
  }
  return out;
}

std::string winner_of(const std::map<std::string, EstimatorSummary>& results) {
  std::map<std::string, double> mse;
  for (const auto& [name, s] : results) mse[name] = s.mse;
  return pick_winner(mse);
}

/// Runs every estimator on one context, writing slot r of each row of `out`.
void evaluate(const std::vector<EstimatorPipeline>& estimators, const PipelineContext& ctx, std::size_t r,
              std::vector<std::vector<double>>& out, std::vector<std::vector<std::string>>& errors) {
  for (std::size_t e = 0; e < estimators.size(); ++e) {
    try {
      const double v = estimators[e].run(ctx);
      if (!std::isfinite(v)) throw EstimationError("non-finite estimate");
      out[e][r] = v;
    } catch (const std::exception& ex) {
      out[e][r] = kNaN;
      errors[e][r] = ex.what();
    }
  }
}

std::map<std::string, EstimatorSummary> collect(const std::vector<EstimatorPipeline>& estimators,
                                                const std::vector<std::vector<double>>& values,
                                                const std::vector<std::vector<std::string>>& errors, double truth) {
  std::map<std::string, std::vector<double>> table;
  for (std::size_t e = 0; e < estimators.size(); ++e) table[estimators[e].name] = values[e];
  auto summary = summarize(table, truth);
  for (std::size_t e = 0; e < estimators.size(); ++e) {
    for (const auto& msg : errors[e]) {
      if (!msg.empty()) {
        summary[estimators[e].name].first_error = msg;
        break;
      }
    }
  }
  return summary;
}

std::vector<std::string> names_of(const std::vector<EstimatorPipeline>& estimators) {
  std::vector<std::string> names;
  for (const auto& e : estimators) names.push_back(e.name);
  return names;
}

void check_estimators(const std::vector<EstimatorPipeline>& estimators) {
  if (estimators.empty()) throw ConfigError("estimator list is empty");
  std::set<std::string> seen;
  for (const auto& e : estimators) {
    if (!seen.insert(e.name).second) throw ConfigError("duplicate estimator '" + e.name + "'");
    if (!e.run) throw ConfigError("estimator '" + e.name + "' has no implementation");
  }
}

void print_aligned(std::ostream& out, const std::vector<std::vector<std::string>>& cells) {
  if (cells.empty()) return;
  std::vector<std::size_t> width(cells.front().size(), 0);
  for (const auto& row : cells)
    for (std::size_t c = 0; c < row.size(); ++c) width[c] = std::max(width[c], row[c].size());
  for (const auto& row : cells) {
    for (std::size_t c = 0; c < row.size(); ++c) {
      out << std::setw(static_cast<int>(width[c])) << row[c] << (c + 1 < row.size() ? "  " : "");
    }
    out << '\n';
  }
}

}  // namespace

std::size_t workers_from_env() {
  const char* text = std::getenv("BENCH_WORKERS");
  if (!text || !*text) return resolve_workers(0);
  char* end = nullptr;
  const long v = std::strtol(text, &end, 10);
  if (*end != '\0' || v < 0) throw ConfigError("BENCH_WORKERS must be a non-negative integer");
  return resolve_workers(static_cast<std::size_t>(v));
}

void ScenarioConfig::validate() const {
  dgp.validate();
  options.forest.validate();
  check_estimators(estimators);
  if (replications < 1) throw ConfigError("replications must be at least 1");
  if (dgp.omega != 0.0) {
    for (const auto& e : estimators) {
      if (e.requires_unconfounded) {
        throw ConfigError("estimator '" + e.name +
                          "' assumes an unconfounded experiment and is invalid when omega != 0");
      }
    }
  }
}

std::string pick_winner(const std::map<std::string, double>& mse) {
  std::string best;
  double best_value = std::numeric_limits<double>::infinity();
  // std::map iterates names in lexicographic order, so strict < keeps the first.
  for (const auto& [name, value] : mse) {
    if (std::isfinite(value) && value < best_value) {
      best_value = value;
      best = name;
    }
  }
  return best;
}

std::map<std::string, EstimatorSummary> summarize(const std::map<std::string, std::vector<double>>& estimates,
                                                  double truth) {
  std::map<std::string, EstimatorSummary> out;
  for (const auto& [name, values] : estimates) {
    EstimatorSummary s;
    s.estimates = values;
    double sq = 0.0, sum = 0.0;
    for (double v : values) {
      if (std::isfinite(v)) {
        ++s.successes;
        sq += (v - truth) * (v - truth);
        sum += v;
      } else {
        ++s.exclusions;
      }
    }
    s.mse = s.successes ? sq / static_cast<double>(s.successes) : kNaN;
    s.mean = s.successes ? sum / static_cast<double>(s.successes) : kNaN;
    out.emplace(name, std::move(s));
  }
  return out;
}

MseRow run_scenario(const ScenarioConfig& sc) {
  sc.validate();
  const double truth = cached_oracle_tau_p(sc.dgp);
  const std::size_t n_est = sc.estimators.size();
  std::vector<std::vector<double>> values(n_est, std::vector<double>(sc.replications, kNaN));
  std::vector<std::vector<std::string>> errors(n_est, std::vector<std::string>(sc.replications));
  const std::uint64_t replication_root = derive_seed(sc.base_seed, stream::kReplication);

  parallel_for(sc.replications, sc.workers, [&](std::size_t r) {
    DgpConfig cfg = sc.dgp;
    cfg.seed = derive_seed(replication_root, r);
    const WorldDraw world = draw_world(cfg, truth);
    const PipelineContext ctx(world.exp, world.obs, sc.options, derive_seed(cfg.seed, stream::kNuisance), truth);
    evaluate(sc.estimators, ctx, r, values, errors);
  });

  MseRow row;
  row.dgp = sc.dgp;
  row.mc_estimate = truth;
  row.estimator_names = names_of(sc.estimators);
  row.results = collect(sc.estimators, values, errors, truth);
  row.winner = winner_of(row.results);
  return row;
}

void write_table_csv(std::ostream& out, const std::vector<MseRow>& rows) {
  std::vector<std::vector<std::string>> lists;
  for (const auto& r : rows) lists.push_back(r.estimator_names);
  const auto names = union_of_names(lists);
  out << "omega,kappa_tau,additive,nuisance,support,mc_estimate";
  for (const auto& n : names) out << ",mse_" << n;
  out << ",winner,exclusions\n";
  for (const auto& r : rows) {
    out << format_number(r.dgp.omega) << ',' << r.dgp.kappa_tau << ',' << (r.dgp.additive ? "yes" : "no") << ','
        << (r.dgp.nuisance ? "yes" : "no") << ',' << to_string(r.dgp.support) << ','
        << format_number(r.mc_estimate, 10);
    for (const auto& n : names) {
      out << ',';
      if (auto it = r.results.find(n); it != r.results.end()) out << format_number(it->second.mse, 10);
    }
    out << ',' << r.winner << ',' << exclusion_text(r.estimator_names, r.results) << '\n';
  }
}

void render_table(std::ostream& out, const std::vector<MseRow>& rows) {
  std::vector<std::vector<std::string>> lists;
  for (const auto& r : rows) lists.push_back(r.estimator_names);
  const auto names = union_of_names(lists);
  std::vector<std::vector<std::string>> cells;
  std::vector<std::string> header{"omega", "kappa", "additive", "nuisance", "support", "MC estimate"};
  header.insert(header.end(), names.begin(), names.end());
  header.push_back("winner");
  header.push_back("excluded");
  cells.push_back(header);
  for (const auto& r : rows) {
    std::vector<std::string> line{format_number(r.dgp.omega), std::to_string(r.dgp.kappa_tau),
                                  r.dgp.additive ? "yes" : "no", r.dgp.nuisance ? "yes" : "no",
                                  to_string(r.dgp.support), format_number(r.mc_estimate, 4)};
    std::size_t excluded = 0;
    for (const auto& n : names) {
      const auto it = r.results.find(n);
      line.push_back(it == r.results.end() ? "-" : format_number(it->second.mse, 4));
      if (it != r.results.end()) excluded += it->second.exclusions;
    }
    line.push_back(r.winner);
    line.push_back(std::to_string(excluded));
    cells.push_back(std::move(line));
  }
  print_aligned(out, cells);
}

std::vector<MseRow> run_table(const std::vector<ScenarioConfig>& grid, const std::filesystem::path& out_path) {
  std::ofstream out(out_path);
  if (!out) throw ConfigError("cannot write '" + out_path.string() + "'");
  std::vector<MseRow> rows;
  rows.reserve(grid.size());
  for (const auto& sc : grid) rows.push_back(run_scenario(sc));
  write_table_csv(out, rows);
  if (!out) throw ConfigError("failed writing '" + out_path.string() + "'");
  return rows;
}

ForestParams fast_forest_params() {
  ForestParams p;
  p.num_trees = 50;
  return p;
}

std::vector<ScenarioConfig> preset_grid(const std::string& name, std::size_t replications, std::uint64_t seed,
                                        const EstimatorOptions& options) {
  struct Knobs {
    double omega;
    int kappa;
    bool additive;
    bool nuisance;
    Support support;
  };
  std::vector<Knobs> knobs;
  const auto I = Support::Identical, S = Support::Shifted, C = Support::Contained;
  if (name == "table1") {
    for (Support sup : {I, S}) {
      knobs.push_back({0, 2, true, true, sup});
      knobs.push_back({0, 2, true, false, sup});
      knobs.push_back({0, 4, false, true, sup});
      knobs.push_back({0, 4, false, false, sup});
    }
  } else if (name == "table2" || name == "table3") {
    const Support other = name == "table2" ? S : C;
    if (name == "table2") {
      knobs.push_back({1, 2, true, true, I});
      knobs.push_back({1, 2, true, false, I});
      knobs.push_back({1, 4, false, true, I});
      knobs.push_back({1, 4, false, false, I});
    } else {
      knobs.push_back({0, 2, true, true, C});
      knobs.push_back({0, 2, true, false, C});
      knobs.push_back({0, 4, false, true, C});
      knobs.push_back({0, 4, false, false, C});
    }
    knobs.push_back({1, 2, true, true, other});
    knobs.push_back({1, 2, true, false, other});
    knobs.push_back({1, 2, false, true, other});
    knobs.push_back({1, 2, false, false, other});
    knobs.push_back({1, 4, false, true, other});
    knobs.push_back({1, 4, false, false, other});
    knobs.push_back({1, 4, true, false, other});
    knobs.push_back({1, 4, true, true, other});
  } else {
    throw ConfigError("unknown preset '" + name + "' (expected table1, table2 or table3)");
  }

  std::vector<ScenarioConfig> grid;
  for (std::size_t i = 0; i < knobs.size(); ++i) {
    const auto& k = knobs[i];
    ScenarioConfig sc;
    sc.dgp.omega = k.omega;
    sc.dgp.kappa_tau = k.kappa;
    sc.dgp.additive = k.additive;
    sc.dgp.nuisance = k.nuisance;
    sc.dgp.support = k.support;
    sc.replications = replications;
    sc.base_seed = derive_seed(seed, i);
    sc.options = options;
    const std::vector<std::string> names =
        k.omega == 0.0 ? (name == "table1" ? std::vector<std::string>{"grf_surrogate", "imputation", "kallus_surrogate"}
                                           : std::vector<std::string>{"grf_surrogate", "kallus_surrogate"})
                       : std::vector<std::string>{"grf_surrogate", "kallus_iv_surrogate"};
    for (const auto& n : names) sc.estimators.push_back(builtin_pipeline(n, k.omega));
    grid.push_back(std::move(sc));
  }
  return grid;
}

std::vector<std::pair<Index, Index>> parse_sizes(const std::string& text) {
  std::vector<std::pair<Index, Index>> out;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    const auto colon = item.find(':');
    if (colon == std::string::npos) throw ConfigError("size pair '" + item + "' must look like n_exp:n_obs");
    try {
      out.emplace_back(std::stoll(item.substr(0, colon)), std::stoll(item.substr(colon + 1)));
    } catch (const std::logic_error&) {
      throw ConfigError("size pair '" + item + "' is not numeric");
    }
    if (out.back().first < 1 || out.back().second < 4) throw ConfigError("size pair '" + item + "' is too small");
  }
  if (out.empty()) throw ConfigError("no size pairs given");
  return out;
}

}  // namespace surrogate
