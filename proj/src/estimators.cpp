#include "surrogate/estimators.hpp"

#include "surrogate/errors.hpp"
#include "surrogate/random.hpp"

#include <cmath>
#include <vector>

namespace surrogate {

namespace {

void require_both_arms(const Vector& w) {
  const double treated = w.sum();
  if (treated < 1.0 || treated > static_cast<double>(w.size()) - 1.0)
    throw EstimationError("single-arm sample: both treatment arms are required");
}

AteEstimate make_estimate(double value, std::string name, Index n_exp, Index n_obs) {
  if (!std::isfinite(value)) throw EstimationError("non-finite estimate from " + name);
  return AteEstimate{value, std::move(name), n_exp, n_obs};
}

Matrix rows_of(const Matrix& x, const std::vector<Index>& rows) {
  Matrix out(static_cast<Index>(rows.size()), x.cols());
  for (std::size_t k = 0; k < rows.size(); ++k) out.row(static_cast<Index>(k)) = x.row(rows[k]);
  return out;
}

Vector entries_of(const Vector& v, const std::vector<Index>& rows) {
  Vector out(static_cast<Index>(rows.size()));
  for (std::size_t k = 0; k < rows.size(); ++k) out[static_cast<Index>(k)] = v[rows[k]];
  return out;
}

}  // namespace

SurrogateBridge::SurrogateBridge(BridgeFunction fn, Index trained_on, std::shared_ptr<const ForestModel> model)
    : fn_(std::move(fn)), trained_on_(trained_on), model_(std::move(model)) {
  if (!fn_) throw EstimationError("bridge without a function");
}

SurrogateBridge fit_bridge(const LabeledSample& obs, const ForestParams& params) {
  if (obs.group != Group::Observational || !obs.primary)
    throw EstimationError("bridge needs an observational sample with the primary outcome");
  const Index p = obs.dims();
  Matrix features(obs.rows(), p + 1);
  features.leftCols(p) = obs.covariates;
  features.col(p) = obs.surrogate;
  auto model = std::make_shared<const ForestModel>(fit_regression(features, *obs.primary, params));
  BridgeFunction fn = [model, p](std::span<const double> x, double y) {
    if (static_cast<Index>(x.size()) != p) throw ValidationError("bridge evaluated with wrong covariate count");
    thread_local std::vector<double> buffer;
    buffer.assign(x.begin(), x.end());
    buffer.push_back(y);
    return model->predict(buffer);
  };
  return SurrogateBridge(std::move(fn), obs.rows(), model);
}

SurrogateBridge linear_bridge(double rho) {
  return SurrogateBridge([rho](std::span<const double>, double y) { return rho * y; }, 0);
}

ImputedSurrogates impute_surrogates(const LabeledSample& obs, const CateStrategy& tau) {
  const Index n = obs.rows();
  ImputedSurrogates out{Vector(n), Vector(n)};
  for (Index i = 0; i < n; ++i) {
    const double effect = tau(obs.row(i));
    const double ys = obs.surrogate[i];
    if (obs.treatment[i] == 1.0) {
      out.treated[i] = ys;
      out.control[i] = ys - effect;
    } else {
      out.treated[i] = ys + effect;
      out.control[i] = ys;
    }
  }
  return out;
}

AteEstimate estimate_ate(const LabeledSample& obs, const LabeledSample& exp, const CateStrategy& tau,
                         const SurrogateBridge& bridge) {
  const auto imputed = impute_surrogates(obs, tau);
  double treated = 0.0, control = 0.0;
  for (Index i = 0; i < obs.rows(); ++i) {
    treated += bridge(obs.row(i), imputed.treated[i]);
    control += bridge(obs.row(i), imputed.control[i]);
  }
  const double n = static_cast<double>(obs.rows());
  return make_estimate(treated / n - control / n, std::string(to_string(tau.kind())), exp.rows(), obs.rows());
}

AteEstimate imputation_baseline(const LabeledSample& obs, const LabeledSample& exp, const SurrogateBridge& bridge,
                                const Vector& e_exp) {
  require_both_arms(exp.treatment);
  if (e_exp.size() != exp.rows()) throw ValidationError("propensity vector does not match the experimental sample");
  double sum1 = 0.0, weight1 = 0.0, sum0 = 0.0, weight0 = 0.0;
  for (Index i = 0; i < exp.rows(); ++i) {
    const double e = e_exp[i];
    if (!(e > 0.0 && e < 1.0)) throw EstimationError("propensity outside (0, 1)");
    const double imputed = bridge(exp.row(i), exp.surrogate[i]);
    if (exp.treatment[i] == 1.0) {
      sum1 += imputed / e;
      weight1 += 1.0 / e;
    } else {
      sum0 += imputed / (1.0 - e);
      weight0 += 1.0 / (1.0 - e);
    }
  }
  return make_estimate(sum1 / weight1 - sum0 / weight0, "imputation", exp.rows(), obs.rows());
}

const Vector& outcome_column(const LabeledSample& sample, Outcome outcome) {
  if (outcome == Outcome::Surrogate) return sample.surrogate;
  if (!sample.primary) throw EstimationError("missing primary outcome");
  return *sample.primary;
}

double aipw_from_models(const Vector& w, const Vector& y, const AipwInputs& in) {
  const Index n = w.size();
  double sum = 0.0;
  for (Index i = 0; i < n; ++i) {
    sum += in.m1[i] - in.m0[i] + w[i] * (y[i] - in.m1[i]) / in.e[i] -
           (1.0 - w[i]) * (y[i] - in.m0[i]) / (1.0 - in.e[i]);
  }
  return sum / static_cast<double>(n);
}

AteEstimate aipw(const LabeledSample& sample, Outcome outcome, const ForestParams& params) {
  const Vector& y = outcome_column(sample, outcome);
  const Vector& w = sample.treatment;
  require_both_arms(w);
  const Index n = sample.rows();
  const auto folds = fold_assignment(n, kCrossFitFolds, derive_seed(params.seed, stream::kFolds));

  AipwInputs in{Vector(n), Vector(n), Vector(n)};
  for (int k = 0; k < kCrossFitFolds; ++k) {
    std::vector<Index> treated, control, train, held;
    for (Index i = 0; i < n; ++i) {
      if (folds[static_cast<std::size_t>(i)] == k) {
        held.push_back(i);
        continue;
      }
      train.push_back(i);
      (w[i] == 1.0 ? treated : control).push_back(i);
    }
    if (held.empty()) continue;
    if (treated.empty() || control.empty()) throw EstimationError("single-arm sample in a cross-fitting fold");
    ForestParams p = params;
    p.seed = derive_seed(params.seed, stream::kFolds + 1 + static_cast<std::uint64_t>(k));
    const ForestModel m1 = fit_regression(rows_of(sample.covariates, treated), entries_of(y, treated), p);
    p.seed = derive_seed(p.seed, 1);
    const ForestModel m0 = fit_regression(rows_of(sample.covariates, control), entries_of(y, control), p);
    p.seed = derive_seed(p.seed, 2);
    const ForestModel e = fit_regression(rows_of(sample.covariates, train), entries_of(w, train), p);
    for (Index i : held) {
      const auto x = sample.row(i);
      in.m1[i] = m1.predict(x);
      in.m0[i] = m0.predict(x);
      in.e[i] = clip_propensity(e.predict(x));
    }
  }
  const Index n_exp = sample.group == Group::Experimental ? n : 0;
  const Index n_obs = sample.group == Group::Observational ? n : 0;
  return make_estimate(aipw_from_models(w, y, in), "aipw", n_exp, n_obs);
}

AteEstimate diff_in_means(const LabeledSample& sample, Outcome outcome) {
  const Vector& y = outcome_column(sample, outcome);
  const Vector& w = sample.treatment;
  require_both_arms(w);
  double sum1 = 0.0, n1 = 0.0, sum0 = 0.0, n0 = 0.0;
  for (Index i = 0; i < w.size(); ++i) {
    if (w[i] == 1.0) {
      sum1 += y[i];
      n1 += 1.0;
    } else {
      sum0 += y[i];
      n0 += 1.0;
    }
  }
  const Index n = sample.rows();
  const Index n_exp = sample.group == Group::Experimental ? n : 0;
  const Index n_obs = sample.group == Group::Observational ? n : 0;
  return make_estimate(sum1 / n1 - sum0 / n0, "diff_in_means", n_exp, n_obs);
}

}  // namespace surrogate
