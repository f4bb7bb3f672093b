#include "surrogate/harness.hpp"

#include "surrogate/errors.hpp"
#include "surrogate/estimators.hpp"
#include "surrogate/parallel.hpp"
#include "surrogate/random.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <ostream>
#include <sstream>

namespace surrogate {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::vector<Index> draw_without_replacement(std::vector<Index> pool, Index k, Engine& engine, const char* stratum) {
  if (static_cast<Index>(pool.size()) < k) {
    throw ValidationError(std::string("stratum '") + stratum + "' has " + std::to_string(pool.size()) +
                          " eligible units, " + std::to_string(k) + " needed");
  }
  std::shuffle(pool.begin(), pool.end(), engine);
  pool.resize(static_cast<std::size_t>(k));
  return pool;
}

/// Lower median of the surrogate over `rows`.
double lower_median(const Vector& surrogate, const std::vector<Index>& rows) {
  std::vector<double> v;
  v.reserve(rows.size());
  for (Index r : rows) v.push_back(surrogate[r]);
  const auto mid = v.begin() + static_cast<std::ptrdiff_t>((v.size() - 1) / 2);
  std::nth_element(v.begin(), mid, v.end());
  return *mid;
}

std::string fmt(double v, int precision) {
  if (!std::isfinite(v)) return "";
  std::ostringstream out;
  out << std::setprecision(precision) << v;
  return out.str();
}

}  // namespace

SubsampleDraw biased_subsample(const GroundTruth& truth, Index n_exp, Index n_obs, std::uint64_t seed) {
  const LabeledSample& s = truth.sample;
  const Index n = s.rows();
  if (static_cast<Index>(truth.location.size()) != n) throw ValidationError("location tag length does not match table");
  if (!s.primary) throw ValidationError("ground truth needs the primary outcome");
  if (n_exp < 1) throw ConfigError("n_exp must be positive");
  if (n_obs < 4 || n_obs % 4 != 0) throw ConfigError("n_obs must be a positive multiple of 4");

  Engine engine = make_engine(seed, stream::kSubsample);
  std::vector<Index> stratum_a;
  for (Index i = 0; i < n; ++i)
    if (truth.location[static_cast<std::size_t>(i)]) stratum_a.push_back(i);

  SubsampleDraw out;
  out.exp_rows = draw_without_replacement(stratum_a, n_exp, engine, "A");
  std::vector<std::uint8_t> in_exp(static_cast<std::size_t>(n), 0);
  for (Index r : out.exp_rows) in_exp[static_cast<std::size_t>(r)] = 1;

  // Treated median per stratum is taken over the full table, before exp removal.
  std::vector<Index> treated[2];
  for (Index i = 0; i < n; ++i)
    if (s.treatment[i] == 1.0) treated[truth.location[static_cast<std::size_t>(i)] ? 0 : 1].push_back(i);

  const Index quota = n_obs / 4;
  const char* names[4] = {"A controls", "A treated below median", "B controls", "B treated below median"};
  for (int cell = 0; cell < 4; ++cell) {
    const bool stratum_is_a = cell < 2;
    const bool want_treated = cell % 2 == 1;
    double cap = std::numeric_limits<double>::infinity();
    if (want_treated) {
      const auto& t = treated[stratum_is_a ? 0 : 1];
      if (t.empty()) throw ValidationError(std::string("stratum '") + names[cell] + "' has no treated units");
      cap = lower_median(s.surrogate, t);
    }
    std::vector<Index> pool;
    for (Index i = 0; i < n; ++i) {
      if (in_exp[static_cast<std::size_t>(i)]) continue;
      if ((truth.location[static_cast<std::size_t>(i)] != 0) != stratum_is_a) continue;
      if ((s.treatment[i] == 1.0) != want_treated) continue;
      if (want_treated && s.surrogate[i] > cap) continue;
      pool.push_back(i);
    }
    const auto picked = draw_without_replacement(std::move(pool), quota, engine, names[cell]);
    out.obs_rows.insert(out.obs_rows.end(), picked.begin(), picked.end());
  }

  out.exp = take_rows(s, out.exp_rows);
  out.exp.group = Group::Experimental;
  out.exp.primary.reset();
  out.obs = take_rows(s, out.obs_rows);
  out.obs.group = Group::Observational;
  return out;
}

std::vector<EstimatorPipeline> semi_synthetic_estimators() {
  return {builtin_pipeline("grf_surrogate", 0.0), builtin_pipeline("imputation", 0.0), builtin_pipeline("aipw", 0.0)};
}

std::vector<SemiSyntheticRow> run_semi_synthetic(const GroundTruth& truth, const SemiSyntheticConfig& config) {
  if (config.sizes.empty()) throw ConfigError("no size pairs given");
  if (config.replications < 1) throw ConfigError("replications must be at least 1");
  config.options.forest.validate();
  const auto estimators = config.estimators.empty() ? semi_synthetic_estimators() : config.estimators;
  const double ate = diff_in_means(truth.sample, Outcome::Primary).value;

  std::vector<SemiSyntheticRow> rows;
  for (std::size_t k = 0; k < config.sizes.size(); ++k) {
    const auto [n_exp, n_obs] = config.sizes[k];
    const std::uint64_t size_seed = derive_seed(config.seed, stream::kReplication + k);
    const std::size_t R = config.replications;
    std::map<std::string, std::vector<double>> table;
    std::vector<std::vector<double>> values(estimators.size(), std::vector<double>(R, kNaN));
    std::vector<std::vector<std::string>> errors(estimators.size(), std::vector<std::string>(R));

    parallel_for(R, config.workers, [&](std::size_t r) {
      const std::uint64_t rep_seed = derive_seed(size_seed, r);
      const SubsampleDraw draw = biased_subsample(truth, n_exp, n_obs, rep_seed);
      const PipelineContext ctx(draw.exp, draw.obs, config.options, derive_seed(rep_seed, stream::kNuisance), ate);
      for (std::size_t e = 0; e < estimators.size(); ++e) {
        try {
          const double v = estimators[e].run(ctx);
          if (!std::isfinite(v)) throw EstimationError("non-finite estimate");
          values[e][r] = v;
        } catch (const std::exception& ex) {
          errors[e][r] = ex.what();
        }
      }
    });

    SemiSyntheticRow row;
    row.n_exp = n_exp;
    row.n_obs = n_obs;
    row.truth = ate;
    for (std::size_t e = 0; e < estimators.size(); ++e) {
      row.estimator_names.push_back(estimators[e].name);
      table[estimators[e].name] = values[e];
    }
    row.results = summarize(table, ate);
    std::map<std::string, double> mse;
    for (std::size_t e = 0; e < estimators.size(); ++e) {
      auto& summary = row.results[estimators[e].name];
      mse[estimators[e].name] = summary.mse;
      for (const auto& msg : errors[e]) {
        if (!msg.empty()) {
          summary.first_error = msg;
          break;
        }
      }
    }
    row.winner = pick_winner(mse);
    rows.push_back(std::move(row));
  }
  return rows;
}

void write_semi_synthetic_csv(std::ostream& out, const std::vector<SemiSyntheticRow>& rows) {
  std::vector<std::string> names;
  for (const auto& r : rows)
    for (const auto& n : r.estimator_names)
      if (std::find(names.begin(), names.end(), n) == names.end()) names.push_back(n);
  out << "n_exp,n_obs,truth";
  for (const auto& n : names) out << ",mse_" << n;
  for (const auto& n : names) out << ",mean_" << n;
  out << ",winner,exclusions\n";
  for (const auto& r : rows) {
    out << r.n_exp << ',' << r.n_obs << ',' << fmt(r.truth, 10);
    for (const char* field : {"mse", "mean"}) {
      for (const auto& n : names) {
        out << ',';
        const auto it = r.results.find(n);
        if (it != r.results.end()) out << fmt(field[1] == 's' ? it->second.mse : it->second.mean, 10);
      }
    }
    out << ',' << r.winner << ',';
    bool first = true;
    for (const auto& n : r.estimator_names) {
      out << (first ? "" : ";") << n << ':' << r.results.at(n).exclusions;
      first = false;
    }
    out << '\n';
  }
}

void render_semi_synthetic(std::ostream& out, const std::vector<SemiSyntheticRow>& rows) {
  for (const auto& r : rows) {
    out << "n_exp=" << r.n_exp << " n_obs=" << r.n_obs << " truth=" << fmt(r.truth, 4) << '\n';
    for (const auto& n : r.estimator_names) {
      const auto& s = r.results.at(n);
      out << "  " << std::left << std::setw(16) << n << std::right << " mse=" << std::setw(10) << fmt(s.mse, 4)
          << " mean=" << std::setw(10) << fmt(s.mean, 4) << " excluded=" << s.exclusions << '\n';
    }
    out << "  winner: " << r.winner << '\n';
  }
}

}  // namespace surrogate
