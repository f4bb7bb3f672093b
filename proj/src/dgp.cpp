#include "surrogate/dgp.hpp"

#include "surrogate/errors.hpp"
#include "surrogate/random.hpp"

#include <cmath>
#include <map>
#include <mutex>
#include <tuple>

namespace surrogate {

const char* to_string(Support s) {
  switch (s) {
    case Support::Identical: return "identical";
    case Support::Shifted: return "shifted";
    case Support::Contained: return "contained";
  }
  return "unknown";
}

Support parse_support(const std::string& text) {
  if (text == "identical") return Support::Identical;
  if (text == "shifted") return Support::Shifted;
  if (text == "contained") return Support::Contained;
  throw ConfigError("unknown support '" + text + "' (expected identical, shifted or contained)");
}

void DgpConfig::validate() const {
  if (!std::isfinite(omega)) throw ConfigError("omega must be finite");
  if (p < 6) throw ConfigError("p must be at least 6");
  if (kappa_tau < 0 || kappa_tau > p) throw ConfigError("kappa_tau must lie in [0, p]");
  if (n_exp < 1 || n_obs < 1) throw ConfigError("sample sizes must be positive");
}

double tau_true(std::span<const double> x, const DgpConfig& cfg) {
  double out = 0.0;
  if (cfg.additive) {
    for (int j = 0; j < cfg.kappa_tau; ++j) out += std::max(0.0, x[static_cast<std::size_t>(j)]);
    return out;
  }
  for (int j = 0; j < cfg.kappa_tau; ++j) out += x[static_cast<std::size_t>(j)];
  return std::max(0.0, out);
}

double mu_nuisance(std::span<const double> x, const DgpConfig& cfg) {
  if (!cfg.nuisance) return 0.0;
  if (cfg.additive) return 3.0 * std::max(0.0, x[4]) + 3.0 * std::max(0.0, x[5]);
  return 3.0 * std::max(0.0, x[4] + x[5]);
}

double surrogate_slope(std::span<const double> x, const DgpConfig& cfg) {
  const auto p = static_cast<std::size_t>(cfg.p);
  // 1-based x^(p-2) + x^(p-1) x^(p-3)
  return 2.0 + x[p - 3] + x[p - 2] * x[p - 4];
}

double primary_mean(std::span<const double> x, double surrogate, const DgpConfig& cfg) {
  double out = surrogate_slope(x, cfg) * surrogate;
  if (cfg.prognostic_terms) {
    for (int j = 0; j < cfg.kappa_tau; ++j) out += x[static_cast<std::size_t>(j)];
    const double last = x[static_cast<std::size_t>(cfg.p) - 1];
    out += last * last;
  }
  return out;
}

namespace {

enum class Law { StandardNormal, ShiftedNormal, Uniform };

Law covariate_law(Support support, Group group) {
  if (group == Group::Experimental) return support == Support::Contained ? Law::Uniform : Law::StandardNormal;
  return support == Support::Shifted ? Law::ShiftedNormal : Law::StandardNormal;
}

void draw_covariates(Engine& engine, Law law, std::span<double> x) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> uniform(-1.0, 1.0);
  for (double& v : x) {
    switch (law) {
      case Law::StandardNormal: v = normal(engine); break;
      case Law::ShiftedNormal: v = 1.0 + normal(engine); break;
      case Law::Uniform: v = uniform(engine); break;
    }
  }
}

struct UnitDraw {
  double w, z, ys, yp, epsilon;
};

/// One unit of the structural model, covariates already in `x`.
UnitDraw draw_unit(Engine& engine, std::span<const double> x, const DgpConfig& cfg) {
  std::normal_distribution<double> normal(0.0, 1.0);
  const double epsilon = normal(engine);
  const double z = std::bernoulli_distribution(1.0 / 3.0)(engine) ? 1.0 : 0.0;
  const double q = std::bernoulli_distribution(1.0 / (1.0 + std::exp(-cfg.omega * epsilon)))(engine) ? 1.0 : 0.0;
  const double w = z * q;
  const double ys = mu_nuisance(x, cfg) + (w - 0.5) * tau_true(x, cfg) + epsilon;
  const double xi = normal(engine);
  return {w, z, ys, primary_mean(x, ys, cfg) + xi, epsilon};
}

LabeledSample draw_sample(const DgpConfig& cfg, Group group, Index n) {
  Engine engine = make_engine(cfg.seed, group == Group::Experimental ? stream::kExperimental : stream::kObservational);
  const Law law = covariate_law(cfg.support, group);
  LabeledSample s;
  s.group = group;
  s.covariates.resize(n, cfg.p);
  for (int j = 0; j < cfg.p; ++j) s.covariate_names.push_back("x" + std::to_string(j + 1));
  s.treatment.resize(n);
  s.surrogate.resize(n);
  Vector z(n), yp(n);
  for (Index i = 0; i < n; ++i) {
    std::span<double> x(s.covariates.data() + i * cfg.p, static_cast<std::size_t>(cfg.p));
    draw_covariates(engine, law, x);
    const UnitDraw u = draw_unit(engine, x, cfg);
    s.treatment[i] = u.w;
    s.surrogate[i] = u.ys;
    z[i] = u.z;
    yp[i] = u.yp;
  }
  if (group == Group::Experimental) s.instrument = std::move(z);
  else s.primary = std::move(yp);
  return s;
}

}  // namespace

WorldDraw draw_world(const DgpConfig& cfg, double truth) {
  cfg.validate();
  return WorldDraw{draw_sample(cfg, Group::Experimental, cfg.n_exp), draw_sample(cfg, Group::Observational, cfg.n_obs),
                   truth};
}

WorldDraw draw_world(const DgpConfig& cfg) { return draw_world(cfg, cached_oracle_tau_p(cfg)); }

OracleResult oracle_tau_p(const DgpConfig& cfg, Index n_mc) {
  cfg.validate();
  if (n_mc < 2) throw ConfigError("oracle needs at least 2 draws");
  Engine engine = make_engine(cfg.seed, stream::kOracle);
  const Law law = covariate_law(cfg.support, Group::Observational);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> x(static_cast<std::size_t>(cfg.p));
  // Welford running moments of the per-unit difference.
  double mean = 0.0, m2 = 0.0;
  for (Index i = 0; i < n_mc; ++i) {
    draw_covariates(engine, law, x);
    const double epsilon = normal(engine);
    const double xi = normal(engine);
    const double base = mu_nuisance(x, cfg) + epsilon;
    const double tau = tau_true(x, cfg);
    const double yp1 = primary_mean(x, base + 0.5 * tau, cfg) + xi;
    const double yp0 = primary_mean(x, base - 0.5 * tau, cfg) + xi;
    const double diff = yp1 - yp0;
    const double delta = diff - mean;
    mean += delta / static_cast<double>(i + 1);
    m2 += delta * (diff - mean);
  }
  const double variance = m2 / static_cast<double>(n_mc - 1);
  return {mean, std::sqrt(variance / static_cast<double>(n_mc))};
}

double cached_oracle_tau_p(const DgpConfig& cfg) {
  using Key = std::tuple<double, int, bool, bool, int, int, bool>;
  static std::mutex mutex;
  static std::map<Key, double> cache;
  const Key key{cfg.omega, cfg.kappa_tau, cfg.additive, cfg.nuisance, static_cast<int>(cfg.support), cfg.p,
                cfg.prognostic_terms};
  {
    std::lock_guard lock(mutex);
    if (auto it = cache.find(key); it != cache.end()) return it->second;
  }
  DgpConfig oracle_cfg = cfg;
  oracle_cfg.seed = kOracleSeed;
  const double value = oracle_tau_p(oracle_cfg, kOracleDraws).value;
  std::lock_guard lock(mutex);
  cache.emplace(key, value);
  return value;
}

GroundTruth make_ground_truth(const DgpConfig& cfg, Index n, int location_covariate) {
  cfg.validate();
  if (location_covariate < 0 || location_covariate >= cfg.p) throw ConfigError("location covariate out of range");
  GroundTruth truth{draw_sample(cfg, Group::Observational, n), {}};
  truth.location.resize(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i)
    truth.location[static_cast<std::size_t>(i)] = truth.sample.covariates(i, location_covariate) > 0.0 ? 1 : 0;
  return truth;
}

}  // namespace surrogate
