#pragma once

#include "surrogate/cate.hpp"
#include "surrogate/data_model.hpp"
#include "surrogate/forest.hpp"

#include <any>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace surrogate {

/// Settings shared by every estimator of a run.
struct EstimatorOptions {
  ForestParams forest;
  /// Experimental propensity: a known constant, or forest-estimated when empty.
  std::optional<double> known_propensity;
  CalibrationOptions calibration;
};

/// Everything one pipeline evaluation may read. Fits are memoized per term,
/// so pipelines evaluated on the same context share e.g. the bridge forest.
class PipelineContext {
 public:
  PipelineContext(const LabeledSample& exp, const LabeledSample& obs, EstimatorOptions options,
                  std::uint64_t seed, double truth);

  const LabeledSample& exp() const { return exp_; }
  const LabeledSample& obs() const { return obs_; }
  const EstimatorOptions& options() const { return options_; }
  std::uint64_t seed() const { return seed_; }
  /// Oracle value, for stub estimators and diagnostics only.
  double truth() const { return truth_; }

  /// Forest settings for the component named `key`; the seed depends only on
  /// (context seed, key).
  ForestParams forest_for(const std::string& key) const;
  PropensitySource propensity_source() const;

  template <class T, class Make>
  const T& memo(const std::string& key, Make&& make) const {
    auto it = cache_.find(key);
    if (it == cache_.end()) it = cache_.emplace(key, std::any(make())).first;
    return std::any_cast<const T&>(it->second);
  }

 private:
  const LabeledSample& exp_;
  const LabeledSample& obs_;
  EstimatorOptions options_;
  std::uint64_t seed_;
  double truth_;
  mutable std::map<std::string, std::any> cache_;
};

using PipelineFn = std::function<double(const PipelineContext&)>;

struct EstimatorPipeline {
  std::string name;
  std::string expression;
  PipelineFn run;
  /// Uses a component that assumes an unconfounded experiment (kallus, imputation).
  bool requires_unconfounded = false;
};

/// Parses a composition such as
///   causal_forest(exp) + bridge(obs) + estimate_ate
/// Terms:
///   CATE:     causal_forest(exp|obs), instrumental_forest(exp), two_sls(exp),
///             kallus(exp), kallus_iv(exp)      [base = causal_forest(obs)]
///   bridge:   bridge(obs), robinson(obs)
///   terminal: estimate_ate, imputation(exp), aipw(obs|exp), diff_in_means(obs|exp)
EstimatorPipeline parse_pipeline(const std::string& name, const std::string& expression);

/// Named compositions: grf_surrogate (causal forest when omega == 0,
/// instrumental forest otherwise), grf_causal_surrogate, grf_iv_surrogate,
/// kallus_surrogate, kallus_iv_surrogate, tsls_surrogate,
/// robinson_surrogate, imputation, aipw, diff_in_means.
EstimatorPipeline builtin_pipeline(const std::string& name, double omega);

bool is_builtin_pipeline(const std::string& name);

/// A pipeline from an arbitrary function (used for injected stubs).
EstimatorPipeline custom_pipeline(std::string name, PipelineFn fn);

}  // namespace surrogate
