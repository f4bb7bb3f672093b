#include "surrogate/cate.hpp"

#include "surrogate/errors.hpp"
#include "surrogate/random.hpp"

#include <cmath>
#include <sstream>

namespace surrogate {

std::string_view to_string(CateKind kind) {
  switch (kind) {
    case CateKind::CausalForest: return "causal_forest";
    case CateKind::InstrumentalForest: return "instrumental_forest";
    case CateKind::TwoSlsConstant: return "two_sls_constant";
    case CateKind::Kallus: return "kallus";
    case CateKind::KallusIv: return "kallus_iv";
    case CateKind::RobinsonConstant: return "robinson_constant";
  }
  return "unknown";
}

CateStrategy::CateStrategy(CateKind kind, Predictor predictor, std::optional<Vector> theta,
                           std::optional<double> rho)
    : kind_(kind), predictor_(std::move(predictor)), theta_(std::move(theta)), rho_(rho) {
  if (!predictor_) throw EstimationError("CATE strategy without a predictor");
}

CateStrategy CateStrategy::constant(double c, CateKind kind) {
  return CateStrategy(kind, [c](std::span<const double>) { return c; }, std::nullopt, c);
}

Vector CateStrategy::predict(const Matrix& x) const {
  Vector out(x.rows());
  for (Index i = 0; i < x.rows(); ++i) {
    out[i] = predictor_(std::span<const double>(x.data() + i * x.cols(), static_cast<std::size_t>(x.cols())));
  }
  return out;
}

double q_weight(double w, double e) {
  if (!(e > 0.0 && e < 1.0)) {
    std::ostringstream msg;
    msg << "propensity " << e << " outside (0, 1)";
    throw EstimationError(msg.str());
  }
  return w / e - (1.0 - w) / (1.0 - e);
}

Vector least_squares(const Eigen::MatrixXd& design, const Vector& target) {
  if (design.rows() < design.cols()) throw EstimationError("collinear design: fewer rows than regressors");
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(design);
  qr.setThreshold(1e-10);
  if (qr.rank() < design.cols()) throw EstimationError("collinear design");
  return qr.solve(target);
}

namespace {

Predictor forest_predictor(ForestModel model) {
  auto shared = std::make_shared<const ForestModel>(std::move(model));
  return [shared](std::span<const double> x) { return shared->predict(x); };
}

/// [1, X] or X, depending on the intercept flag.
Eigen::MatrixXd affine_design(const Matrix& x, bool intercept) {
  const Index offset = intercept ? 1 : 0;
  Eigen::MatrixXd d(x.rows(), x.cols() + offset);
  if (intercept) d.col(0).setOnes();
  d.rightCols(x.cols()) = x;
  return d;
}

/// base(x) + theta'[1, x] (or theta'x).
CateStrategy calibrated(CateKind kind, const CateStrategy& base, Vector theta, bool intercept) {
  Predictor inner = base.predictor();
  auto coef = std::make_shared<const Vector>(theta);
  Predictor predictor = [inner, coef, intercept](std::span<const double> x) {
    double shift = 0.0;
    Index j = 0;
    if (intercept) shift = (*coef)[j++];
    for (double v : x) shift += (*coef)[j++] * v;
    return inner(x) + shift;
  };
  return CateStrategy(kind, std::move(predictor), std::move(theta));
}

void require_instrument(const LabeledSample& s) {
  if (!s.instrument) throw EstimationError("sample has no instrument column");
}

}  // namespace

CateStrategy fit_causal_forest(const LabeledSample& sample, const ForestParams& params) {
  return CateStrategy(CateKind::CausalForest,
                      forest_predictor(fit_causal(sample.covariates, sample.treatment, sample.surrogate, params)));
}

CateStrategy fit_instrumental_forest(const LabeledSample& sample, const ForestParams& params) {
  require_instrument(sample);
  return CateStrategy(CateKind::InstrumentalForest,
                      forest_predictor(fit_instrumental(sample.covariates, sample.treatment, *sample.instrument,
                                                        sample.surrogate, params)));
}

double two_stage_least_squares(const Matrix& controls, const Vector& w, const Vector& z, const Vector& y) {
  const Index n = w.size();
  const Index k = controls.cols();
  if (z.size() != n || y.size() != n || controls.rows() != n) throw ValidationError("dimension mismatch in 2SLS");

  Eigen::MatrixXd exog(n, k + 1);
  exog.col(0).setOnes();
  exog.rightCols(k) = controls;

  Eigen::MatrixXd first(n, k + 2);
  first.leftCols(k + 1) = exog;
  first.col(k + 1) = z;
  const Vector w_hat = first * least_squares(first, w);

  // Share of W's variance that Z explains beyond the controls.
  const Vector w_restricted = exog * least_squares(exog, w);
  const double explained = ((w - w_restricted).squaredNorm() - (w - w_hat).squaredNorm()) / static_cast<double>(n);
  if (explained <= 1e-6) throw EstimationError("weak instrument: first stage explains no variance of W");

  Eigen::MatrixXd second(n, k + 2);
  second.leftCols(k + 1) = exog;
  second.col(k + 1) = w_hat;
  return least_squares(second, y)[k + 1];
}

CateStrategy fit_two_sls(const LabeledSample& exp) {
  require_instrument(exp);
  const double tau = two_stage_least_squares(exp.covariates, exp.treatment, *exp.instrument, exp.surrogate);
  return CateStrategy::constant(tau, CateKind::TwoSlsConstant);
}

CateStrategy fit_robinson(const LabeledSample& obs, const ForestParams& params) {
  if (!obs.primary) throw EstimationError("missing primary outcome");
  ForestParams p = params;
  p.seed = derive_seed(params.seed, stream::kCentering);
  const Vector r_primary = *obs.primary - cross_fit_regression(obs.covariates, *obs.primary, p);
  const Vector r_surrogate = obs.surrogate - cross_fit_regression(obs.covariates, obs.surrogate, p);
  const double denom = r_surrogate.squaredNorm();
  if (denom < 1e-8) throw EstimationError("surrogate fully explained by X");
  const double rho = r_primary.dot(r_surrogate) / denom;
  return CateStrategy(CateKind::RobinsonConstant, [rho](std::span<const double>) { return rho; }, std::nullopt, rho);
}

PropensitySource PropensitySource::known(double e) {
  if (!(e > 0.0 && e < 1.0)) throw ConfigError("known propensity must lie in (0, 1)");
  PropensitySource s;
  s.known_ = e;
  return s;
}

PropensitySource PropensitySource::forest(const ForestParams& params) {
  PropensitySource s;
  s.params_ = params;
  return s;
}

Vector PropensitySource::scores(const LabeledSample& sample) const {
  if (known_) return Vector::Constant(sample.rows(), *known_);
  ForestParams p = params_;
  p.seed = derive_seed(params_.seed, stream::kNuisance);
  return cross_fit_propensity(sample.covariates, sample.treatment, p);
}

CateStrategy fit_kallus(const LabeledSample& exp, const CateStrategy& base, const Vector& e_exp,
                        CalibrationOptions options) {
  const Index n = exp.rows();
  if (e_exp.size() != n) throw ValidationError("propensity vector does not match the experimental sample");
  Vector target(n);
  for (Index i = 0; i < n; ++i) {
    target[i] = q_weight(exp.treatment[i], e_exp[i]) * exp.surrogate[i] - base(exp.row(i));
  }
  Vector theta = least_squares(affine_design(exp.covariates, options.intercept), target);
  return calibrated(CateKind::Kallus, base, std::move(theta), options.intercept);
}

CateStrategy fit_kallus(const LabeledSample& exp, const CateStrategy& base, const PropensitySource& e_source,
                        CalibrationOptions options) {
  return fit_kallus(exp, base, e_source.scores(exp), options);
}

IvNuisances fit_iv_nuisances(const LabeledSample& exp, const ForestParams& params) {
  require_instrument(exp);
  const Vector& y = exp.surrogate;
  const Vector& z = *exp.instrument;
  const Vector& w = exp.treatment;
  const Vector yz = y.cwiseProduct(z);
  const Vector wz = w.cwiseProduct(z);
  const Vector* targets[] = {&y, &z, &w, &yz, &wz};

  IvNuisances out;
  Matrix in_sample(exp.rows(), 5);
  Predictor* slots[] = {&out.mu, &out.pi, &out.e, &out.m, &out.gamma};
  for (int k = 0; k < 5; ++k) {
    ForestParams p = params;
    p.seed = derive_seed(params.seed, stream::kNuisance + 1 + static_cast<std::uint64_t>(k));
    auto fit = std::make_shared<const CrossFit>(cross_fit_regression_models(exp.covariates, *targets[k], p));
    const bool clip = k == 1 || k == 2;
    Vector oof = fit->out_of_fold;
    if (clip) oof = oof.unaryExpr([](double v) { return clip_propensity(v); });
    in_sample.col(k) = oof;
    if (clip) {
      *slots[k] = [fit](std::span<const double> x) { return clip_propensity(fit->predict(x)); };
    } else {
      *slots[k] = [fit](std::span<const double> x) { return fit->predict(x); };
    }
  }
  out.in_sample = std::move(in_sample);
  return out;
}

CateStrategy fit_kallus_iv(const LabeledSample& exp, const CateStrategy& base, const IvNuisances& nuisances,
                           CalibrationOptions options) {
  const Index n = exp.rows();
  const bool cached = nuisances.in_sample && nuisances.in_sample->rows() == n;
  Vector a(n), d(n), base_values(n);
  for (Index i = 0; i < n; ++i) {
    const auto x = exp.row(i);
    double mu, pi, e, m, gamma;
    if (cached) {
      const auto& v = *nuisances.in_sample;
      mu = v(i, 0), pi = v(i, 1), e = v(i, 2), m = v(i, 3), gamma = v(i, 4);
    } else {
      mu = nuisances.mu(x), pi = nuisances.pi(x), e = nuisances.e(x), m = nuisances.m(x), gamma = nuisances.gamma(x);
    }
    a[i] = m - mu * pi;
    d[i] = gamma - e * pi;
    base_values[i] = base(x);
  }
  if ((d.array().abs() < 1e-6).all()) throw EstimationError("no instrument strength in sample");
  Eigen::MatrixXd design = affine_design(exp.covariates, options.intercept);
  design = d.asDiagonal() * design;
  const Vector target = a - base_values.cwiseProduct(d);
  Vector theta = least_squares(design, target);
  return calibrated(CateKind::KallusIv, base, std::move(theta), options.intercept);
}

}  // namespace surrogate
