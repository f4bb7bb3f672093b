#include "surrogate/pipeline.hpp"

#include "surrogate/errors.hpp"
#include "surrogate/estimators.hpp"
#include "surrogate/random.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

namespace surrogate {

namespace {

/// FNV-1a; stable across platforms, unlike std::hash.
std::uint64_t stable_hash(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t");
  if (first == std::string::npos) return {};
  return s.substr(first, s.find_last_not_of(" \t") - first + 1);
}

struct Term {
  std::string name;
  std::vector<std::string> args;

  std::string text() const {
    std::string out = name;
    if (!args.empty()) {
      out += '(';
      for (std::size_t i = 0; i < args.size(); ++i) out += (i ? "," : "") + args[i];
      out += ')';
    }
    return out;
  }
};

Term parse_term(const std::string& raw, const std::string& pipeline) {
  const std::string text = trim(raw);
  Term term;
  const auto open = text.find('(');
  if (open == std::string::npos) {
    term.name = text;
  } else {
    if (text.back() != ')') throw ConfigError("pipeline '" + pipeline + "': unbalanced parentheses in '" + text + "'");
    term.name = trim(text.substr(0, open));
    std::stringstream inner(text.substr(open + 1, text.size() - open - 2));
    std::string arg;
    while (std::getline(inner, arg, ',')) {
      arg = trim(arg);
      if (!arg.empty()) term.args.push_back(arg);
    }
  }
  if (term.name.empty()) throw ConfigError("pipeline '" + pipeline + "': empty term");
  return term;
}

enum class SampleRef { Exp, Obs };

struct State {
  std::optional<CateStrategy> tau;
  std::optional<SurrogateBridge> bridge;
  std::optional<double> result;
};

using Step = std::function<void(const PipelineContext&, State&)>;

const LabeledSample& sample_of(const PipelineContext& ctx, SampleRef ref) {
  return ref == SampleRef::Exp ? ctx.exp() : ctx.obs();
}

const Vector& exp_propensity(const PipelineContext& ctx) {
  return ctx.memo<Vector>("propensity(exp)", [&] { return ctx.propensity_source().scores(ctx.exp()); });
}

const CateStrategy& observational_base(const PipelineContext& ctx) {
  return ctx.memo<CateStrategy>("causal_forest(obs)", [&] {
    return fit_causal_forest(ctx.obs(), ctx.forest_for("causal_forest(obs)"));
  });
}

class PipelineBuilder {
 public:
  explicit PipelineBuilder(std::string name) : name_(std::move(name)) {}

  void add(const Term& t) {
    if (has_terminal_) fail("'" + t.name + "' follows the terminal step");
    const std::string key = t.text();
    if (t.name == "causal_forest") {
      const SampleRef ref = sample_arg(t, {SampleRef::Exp, SampleRef::Obs});
      tau_step(key, [key, ref](const PipelineContext& ctx) {
        return fit_causal_forest(sample_of(ctx, ref), ctx.forest_for(key));
      });
    } else if (t.name == "instrumental_forest") {
      sample_arg(t, {SampleRef::Exp});
      tau_step(key, [key](const PipelineContext& ctx) { return fit_instrumental_forest(ctx.exp(), ctx.forest_for(key)); });
    } else if (t.name == "two_sls") {
      sample_arg(t, {SampleRef::Exp});
      tau_step(key, [](const PipelineContext& ctx) { return fit_two_sls(ctx.exp()); });
    } else if (t.name == "kallus") {
      sample_arg(t, {SampleRef::Exp});
      unconfounded_ = true;
      tau_step(key, [](const PipelineContext& ctx) {
        return fit_kallus(ctx.exp(), observational_base(ctx), exp_propensity(ctx), ctx.options().calibration);
      });
    } else if (t.name == "kallus_iv") {
      sample_arg(t, {SampleRef::Exp});
      tau_step(key, [](const PipelineContext& ctx) {
        const auto& nuisances = ctx.memo<IvNuisances>("iv_nuisances(exp)", [&] {
          return fit_iv_nuisances(ctx.exp(), ctx.forest_for("iv_nuisances(exp)"));
        });
        return fit_kallus_iv(ctx.exp(), observational_base(ctx), nuisances, ctx.options().calibration);
      });
    } else if (t.name == "bridge" || t.name == "robinson") {
      sample_arg(t, {SampleRef::Obs});
      has_bridge_ = true;
      const bool linear = t.name == "robinson";
      steps_.push_back([key, linear](const PipelineContext& ctx, State& s) {
        s.bridge = ctx.memo<SurrogateBridge>(key, [&] {
          if (linear) return linear_bridge(*fit_robinson(ctx.obs(), ctx.forest_for(key)).rho());
          return fit_bridge(ctx.obs(), ctx.forest_for(key));
        });
      });
    } else if (t.name == "estimate_ate") {
      no_args(t);
      if (!has_tau_ || !has_bridge_) fail("estimate_ate needs a CATE step and a bridge step before it");
      terminal([](const PipelineContext& ctx, State& s) {
        return estimate_ate(ctx.obs(), ctx.exp(), *s.tau, *s.bridge).value;
      });
    } else if (t.name == "imputation") {
      sample_arg(t, {SampleRef::Exp});
      if (!has_bridge_) fail("imputation needs a bridge step before it");
      unconfounded_ = true;
      terminal([](const PipelineContext& ctx, State& s) {
        return imputation_baseline(ctx.obs(), ctx.exp(), *s.bridge, exp_propensity(ctx)).value;
      });
    } else if (t.name == "aipw" || t.name == "diff_in_means") {
      const SampleRef ref = sample_arg(t, {SampleRef::Exp, SampleRef::Obs});
      const Outcome outcome = ref == SampleRef::Obs ? Outcome::Primary : Outcome::Surrogate;
      if (t.name == "aipw") {
        terminal([key, ref, outcome](const PipelineContext& ctx, State&) {
          return aipw(sample_of(ctx, ref), outcome, ctx.forest_for(key)).value;
        });
      } else {
        terminal([ref, outcome](const PipelineContext& ctx, State&) {
          return diff_in_means(sample_of(ctx, ref), outcome).value;
        });
      }
    } else {
      fail("unknown term '" + t.name + "'");
    }
  }

  EstimatorPipeline build(std::string expression) {
    if (!has_terminal_) fail("no terminal step (estimate_ate, imputation, aipw, diff_in_means)");
    auto steps = std::move(steps_);
    PipelineFn fn = [steps](const PipelineContext& ctx) {
      State state;
      for (const auto& step : steps) step(ctx, state);
      return *state.result;
    };
    return EstimatorPipeline{name_, std::move(expression), std::move(fn), unconfounded_};
  }

 private:
  [[noreturn]] void fail(const std::string& what) const { throw ConfigError("pipeline '" + name_ + "': " + what); }

  void no_args(const Term& t) const {
    if (!t.args.empty()) fail("'" + t.name + "' takes no arguments");
  }

  SampleRef sample_arg(const Term& t, std::initializer_list<SampleRef> allowed) const {
    if (t.args.size() != 1) fail("'" + t.name + "' takes exactly one sample argument");
    const std::string& a = t.args.front();
    std::optional<SampleRef> ref;
    if (a == "exp") ref = SampleRef::Exp;
    if (a == "obs") ref = SampleRef::Obs;
    if (!ref || std::find(allowed.begin(), allowed.end(), *ref) == allowed.end())
      fail("'" + t.name + "' cannot take sample '" + a + "'");
    return *ref;
  }

  void tau_step(const std::string& key, std::function<CateStrategy(const PipelineContext&)> fit) {
    if (has_tau_) fail("more than one CATE step");
    has_tau_ = true;
    steps_.push_back([key, fit](const PipelineContext& ctx, State& s) {
      s.tau = ctx.memo<CateStrategy>(key, [&] { return fit(ctx); });
    });
  }

  void terminal(std::function<double(const PipelineContext&, State&)> fn) {
    has_terminal_ = true;
    steps_.push_back([fn](const PipelineContext& ctx, State& s) { s.result = fn(ctx, s); });
  }

  std::string name_;
  std::vector<Step> steps_;
  bool has_tau_ = false;
  bool has_bridge_ = false;
  bool has_terminal_ = false;
  bool unconfounded_ = false;
};

const std::map<std::string, std::string>& builtin_expressions() {
  static const std::map<std::string, std::string> table = {
      {"grf_causal_surrogate", "causal_forest(exp) + bridge(obs) + estimate_ate"},
      {"grf_iv_surrogate", "instrumental_forest(exp) + bridge(obs) + estimate_ate"},
      {"kallus_surrogate", "kallus(exp) + bridge(obs) + estimate_ate"},
      {"kallus_iv_surrogate", "kallus_iv(exp) + bridge(obs) + estimate_ate"},
      {"tsls_surrogate", "two_sls(exp) + bridge(obs) + estimate_ate"},
      {"robinson_surrogate", "causal_forest(exp) + robinson(obs) + estimate_ate"},
      {"imputation", "bridge(obs) + imputation(exp)"},
      {"aipw", "aipw(obs)"},
      {"diff_in_means", "diff_in_means(obs)"},
  };
  return table;
}

}  // namespace

PipelineContext::PipelineContext(const LabeledSample& exp, const LabeledSample& obs, EstimatorOptions options,
                                 std::uint64_t seed, double truth)
    : exp_(exp), obs_(obs), options_(std::move(options)), seed_(seed), truth_(truth) {}

ForestParams PipelineContext::forest_for(const std::string& key) const {
  ForestParams p = options_.forest;
  p.seed = derive_seed(seed_, stable_hash(key));
  return p;
}

PropensitySource PipelineContext::propensity_source() const {
  if (options_.known_propensity) return PropensitySource::known(*options_.known_propensity);
  return PropensitySource::forest(forest_for("propensity(exp)"));
}

EstimatorPipeline parse_pipeline(const std::string& name, const std::string& expression) {
  PipelineBuilder builder(name);
  std::stringstream in(expression);
  std::string raw;
  while (std::getline(in, raw, '+')) builder.add(parse_term(raw, name));
  return builder.build(expression);
}

bool is_builtin_pipeline(const std::string& name) {
  return name == "grf_surrogate" || builtin_expressions().count(name) > 0;
}

EstimatorPipeline builtin_pipeline(const std::string& name, double omega) {
  if (name == "grf_surrogate") {
    const auto& base = builtin_expressions().at(omega == 0.0 ? "grf_causal_surrogate" : "grf_iv_surrogate");
    return parse_pipeline(name, base);
  }
  const auto it = builtin_expressions().find(name);
  if (it == builtin_expressions().end()) throw ConfigError("unknown estimator '" + name + "'");
  return parse_pipeline(name, it->second);
}

EstimatorPipeline custom_pipeline(std::string name, PipelineFn fn) {
  return EstimatorPipeline{std::move(name), "<custom>", std::move(fn), false};
}

}  // namespace surrogate
