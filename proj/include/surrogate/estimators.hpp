#pragma once

#include "surrogate/cate.hpp"
#include "surrogate/data_model.hpp"
#include "surrogate/forest.hpp"

#include <functional>
#include <memory>
#include <span>

namespace surrogate {

using BridgeFunction = std::function<double(std::span<const double> x, double surrogate)>;

/// mu(x, y) = E[Y^P | X = x, Y^S = y] on the observational sample. The
/// fitted form is a regression forest on features [x_1..x_p, y].
class SurrogateBridge {
 public:
  SurrogateBridge(BridgeFunction fn, Index trained_on, std::shared_ptr<const ForestModel> model = nullptr);

  double operator()(std::span<const double> x, double surrogate) const { return fn_(x, surrogate); }

  Index trained_on() const { return trained_on_; }
  /// Null for injected bridges.
  const std::shared_ptr<const ForestModel>& model() const { return model_; }

 private:
  BridgeFunction fn_;
  Index trained_on_;
  std::shared_ptr<const ForestModel> model_;
};

SurrogateBridge fit_bridge(const LabeledSample& obs, const ForestParams& params);

/// mu(x, y) = rho * y; the partially linear bridge behind fit_robinson.
SurrogateBridge linear_bridge(double rho);

struct ImputedSurrogates {
  Vector treated;  // Y^S(1) estimates
  Vector control;  // Y^S(0) estimates
};

/// Observed surrogate for the realized arm, observed +/- tau(x) for the other.
ImputedSurrogates impute_surrogates(const LabeledSample& obs, const CateStrategy& tau);

/// Mean over observational units of mu(x, Y^S(1)) - mu(x, Y^S(0)).
AteEstimate estimate_ate(const LabeledSample& obs, const LabeledSample& exp, const CateStrategy& tau,
                         const SurrogateBridge& bridge);

/// Hajek-weighted treated-minus-control contrast of mu(X_i, Y^S_i) over the
/// experimental sample.
AteEstimate imputation_baseline(const LabeledSample& obs, const LabeledSample& exp, const SurrogateBridge& bridge,
                                const Vector& e_exp);

enum class Outcome { Surrogate, Primary };

const Vector& outcome_column(const LabeledSample& sample, Outcome outcome);

/// Outcome models and propensity at each row, for aipw_from_models.
struct AipwInputs {
  Vector m1;
  Vector m0;
  Vector e;
};

/// mean of m1 - m0 + W (Y - m1) / e - (1 - W)(Y - m0) / (1 - e).
double aipw_from_models(const Vector& w, const Vector& y, const AipwInputs& inputs);

/// Cross-fitted AIPW with arm-specific outcome forests and a clipped
/// propensity forest.
AteEstimate aipw(const LabeledSample& sample, Outcome outcome, const ForestParams& params);

AteEstimate diff_in_means(const LabeledSample& sample, Outcome outcome);

}  // namespace surrogate
