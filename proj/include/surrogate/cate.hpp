#pragma once

#include "surrogate/data_model.hpp"
#include "surrogate/forest.hpp"

#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string_view>

namespace surrogate {

enum class CateKind {
  CausalForest,
  InstrumentalForest,
  TwoSlsConstant,
  Kallus,
  KallusIv,
  RobinsonConstant,
};

std::string_view to_string(CateKind kind);

using Predictor = std::function<double(std::span<const double>)>;

/// A fitted x -> tau(x). Copies share the underlying model; all members are
/// immutable after construction.
class CateStrategy {
 public:
  CateStrategy(CateKind kind, Predictor predictor, std::optional<Vector> theta = std::nullopt,
               std::optional<double> rho = std::nullopt);

  /// Constant effect c; used by tests and stub pipelines.
  static CateStrategy constant(double c, CateKind kind = CateKind::TwoSlsConstant);

  double operator()(std::span<const double> x) const { return predictor_(x); }
  Vector predict(const Matrix& x) const;

  CateKind kind() const { return kind_; }
  const Predictor& predictor() const { return predictor_; }
  /// Calibration coefficients, intercept first (Kallus variants only).
  const std::optional<Vector>& theta() const { return theta_; }
  /// Constant coefficient (2SLS effect or Robinson bridge slope).
  const std::optional<double>& rho() const { return rho_; }

 private:
  CateKind kind_;
  Predictor predictor_;
  std::optional<Vector> theta_;
  std::optional<double> rho_;
};

/// Signed inverse-propensity weight w/e - (1-w)/(1-e). Requires 0 < e < 1.
double q_weight(double w, double e);

/// Causal forest on (X, W, Y^S) of `sample`.
CateStrategy fit_causal_forest(const LabeledSample& sample, const ForestParams& params);

/// Instrumental forest on (X, W, Z, Y^S); needs the instrument column.
CateStrategy fit_instrumental_forest(const LabeledSample& sample, const ForestParams& params);

/// Constant-effect two-stage least squares with covariates as exogenous
/// controls: W on [1, X, Z], then Y^S on [1, X, W_hat].
CateStrategy fit_two_sls(const LabeledSample& exp);

/// The 2SLS effect of w on y with instrument z; `controls` may have zero
/// columns (intercept only).
double two_stage_least_squares(const Matrix& controls, const Vector& w, const Vector& z, const Vector& y);

/// Ordinary least squares; throws EstimationError("collinear design") when
/// the design is rank deficient.
Vector least_squares(const Eigen::MatrixXd& design, const Vector& target);

/// Residual-on-residual slope of Y^P on Y^S after partialling X out with
/// cross-fitted forests. The returned predictor is the constant rho.
CateStrategy fit_robinson(const LabeledSample& obs, const ForestParams& params);

/// Where the experimental propensity e(x) comes from.
class PropensitySource {
 public:
  static PropensitySource known(double e);
  static PropensitySource forest(const ForestParams& params);

  bool is_known() const { return known_.has_value(); }
  double known_value() const { return *known_; }
  const ForestParams& params() const { return params_; }

  /// In-sample propensities for `sample` (cross-fitted when estimated).
  Vector scores(const LabeledSample& sample) const;

 private:
  std::optional<double> known_;
  ForestParams params_;
};

struct CalibrationOptions {
  /// Prepend an intercept to the affine correction.
  bool intercept = true;
};

/// Pseudo-outcome calibration of a (possibly biased) observational CATE:
/// least squares of q(X_i) Y^S_i - base(X_i) on [1, X_i] over the
/// experimental sample; returns x -> base(x) + theta'[1, x].
CateStrategy fit_kallus(const LabeledSample& exp, const CateStrategy& base, const Vector& e_exp,
                        CalibrationOptions options = {});
CateStrategy fit_kallus(const LabeledSample& exp, const CateStrategy& base,
                        const PropensitySource& e_source, CalibrationOptions options = {});

/// E[Y|x], E[Z|x], E[W|x], E[YZ|x], E[WZ|x] on the experimental sample.
struct IvNuisances {
  Predictor mu;
  Predictor pi;
  Predictor e;
  Predictor m;
  Predictor gamma;
  /// Out-of-fold values at the fitting sample's rows, columns
  /// (mu, pi, e, m, gamma). Used instead of the predictors when the
  /// calibration runs on that same sample.
  std::optional<Matrix> in_sample;
};

IvNuisances fit_iv_nuisances(const LabeledSample& exp, const ForestParams& params);

/// IV-moment calibration: with a_i = m - mu*pi and d_i = gamma - e*pi at x_i,
/// least squares of (a_i - base(x_i) d_i) on d_i [1, x_i].
CateStrategy fit_kallus_iv(const LabeledSample& exp, const CateStrategy& base, const IvNuisances& nuisances,
                           CalibrationOptions options = {});

}  // namespace surrogate
