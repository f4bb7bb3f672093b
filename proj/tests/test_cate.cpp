#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "surrogate/cate.hpp"
#include "surrogate/dgp.hpp"
#include "surrogate/errors.hpp"
#include "surrogate/random.hpp"

#include <cmath>
#include <random>

using namespace surrogate;

namespace {

Vector vec(std::initializer_list<double> v) {
  Vector out(static_cast<Index>(v.size()));
  Index i = 0;
  for (double x : v) out[i++] = x;
  return out;
}

/// Randomized experiment with known propensity e and tau(x) = 1 + x1 - 0.5 x2.
LabeledSample randomized(Index n, Index p, double e, std::uint64_t seed, double noise = 1.0) {
  Engine rng(seed);
  std::normal_distribution<double> normal;
  std::bernoulli_distribution coin(e);
  LabeledSample s;
  s.covariates.resize(n, p);
  for (Index j = 0; j < p; ++j) s.covariate_names.push_back("x" + std::to_string(j + 1));
  s.treatment.resize(n);
  s.surrogate.resize(n);
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < p; ++j) s.covariates(i, j) = normal(rng);
    s.treatment[i] = coin(rng) ? 1.0 : 0.0;
    const double tau = 1.0 + s.covariates(i, 0) - 0.5 * s.covariates(i, 1);
    s.surrogate[i] = (s.treatment[i] - 0.5) * tau + noise * normal(rng);
  }
  return s;
}

double linear_tau(std::span<const double> x) { return 1.0 + x[0] - 0.5 * x[1]; }

ForestParams fast() {
  ForestParams p;
  p.num_trees = 50;
  return p;
}

}  // namespace

TEST_CASE("q_weight values and identity") {
  CHECK(q_weight(1, 0.5) == 2.0);
  CHECK(q_weight(0, 0.5) == -2.0);
  CHECK(q_weight(1, 0.25) == 4.0);
  for (double e : {0.01, 0.1, 1.0 / 6.0, 0.5, 0.77, 0.99}) {
    CHECK(e * q_weight(1, e) + (1 - e) * q_weight(0, e) == doctest::Approx(0.0).epsilon(1e-15));
  }
  CHECK_THROWS_AS(q_weight(1, 0.0), EstimationError);
  CHECK_THROWS_AS(q_weight(0, 1.0), EstimationError);
}

TEST_CASE("two stage least squares on the six-point example") {
  LabeledSample s;
  s.covariates.resize(6, 0);
  s.treatment = vec({1, 1, 0, 0, 0, 1});
  s.instrument = vec({1, 1, 1, 0, 0, 0});
  s.surrogate = vec({4, 4, 1, 1, 1, 4});
  // (3 - 2) / (2/3 - 1/3)
  CHECK(two_stage_least_squares(s.covariates, s.treatment, *s.instrument, s.surrogate) ==
        doctest::Approx(3.0).epsilon(1e-12));
}

TEST_CASE("2SLS with z = w equals the OLS coefficient of w") {
  LabeledSample s = randomized(400, 3, 0.4, 21);
  s.instrument = s.treatment;
  const CateStrategy tsls = fit_two_sls(s);
  Eigen::MatrixXd design(400, 5);
  design.col(0).setOnes();
  design.middleCols(1, 3) = s.covariates;
  design.col(4) = s.treatment;
  const Vector ols = least_squares(design, s.surrogate);
  CHECK(tsls.rho().value() == doctest::Approx(ols[4]).epsilon(1e-10));
  CHECK(tsls.kind() == CateKind::TwoSlsConstant);
}

TEST_CASE("2SLS under confounding recovers a constant effect") {
  Engine rng(22);
  std::normal_distribution<double> normal;
  const Index n = 2000;
  LabeledSample s;
  s.covariates.resize(n, 10);
  s.treatment.resize(n);
  s.surrogate.resize(n);
  s.instrument = Vector(n);
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < 10; ++j) s.covariates(i, j) = normal(rng);
    const double eps = normal(rng);
    const double z = std::bernoulli_distribution(1.0 / 3.0)(rng) ? 1.0 : 0.0;
    const double q = std::bernoulli_distribution(1.0 / (1.0 + std::exp(-eps)))(rng) ? 1.0 : 0.0;
    (*s.instrument)[i] = z;
    s.treatment[i] = z * q;
    s.surrogate[i] = (s.treatment[i] - 0.5) * 2.0 + eps;
  }
  const double tau = fit_two_sls(s).rho().value();
  CHECK(tau >= 1.7);
  CHECK(tau <= 2.3);

  SUBCASE("a treatment the instrument cannot move is rejected") {
    s.treatment.setZero();
    CHECK_THROWS_WITH_AS(fit_two_sls(s), doctest::Contains("weak instrument"), EstimationError);
  }
}

TEST_CASE("least squares rejects collinear designs") {
  Eigen::MatrixXd d(4, 2);
  d << 1, 2, 2, 4, 3, 6, 4, 8;
  CHECK_THROWS_WITH_AS(least_squares(d, Vector::Ones(4)), doctest::Contains("collinear design"), EstimationError);
}

TEST_CASE("robinson slope") {
  SUBCASE("exact multiple") {
    LabeledSample obs = randomized(300, 3, 0.5, 23);
    obs.group = Group::Observational;
    obs.primary = 2.0 * obs.surrogate;
    const CateStrategy r = fit_robinson(obs, fast());
    CHECK(r.rho().value() == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(r.kind() == CateKind::RobinsonConstant);
  }
  SUBCASE("partially linear model with noise") {
    LabeledSample obs = randomized(2000, 3, 0.5, 24);
    Engine rng(25);
    std::normal_distribution<double> normal;
    obs.primary = Vector(2000);
    for (Index i = 0; i < 2000; ++i)
      (*obs.primary)[i] = 2.0 * obs.surrogate[i] + 3.0 * std::max(0.0, obs.covariates(i, 0)) + normal(rng);
    const double rho = fit_robinson(obs, ForestParams{}).rho().value();
    CHECK(rho >= 1.85);
    CHECK(rho <= 2.15);
  }
  SUBCASE("surrogate determined by a binary covariate") {
    LabeledSample obs;
    obs.covariates.resize(200, 1);
    obs.treatment.resize(200);
    obs.surrogate.resize(200);
    obs.primary = Vector(200);
    for (Index i = 0; i < 200; ++i) {
      obs.covariates(i, 0) = i % 2;
      obs.treatment[i] = (i / 2) % 2;
      obs.surrogate[i] = 2.0 * obs.covariates(i, 0);
      (*obs.primary)[i] = i * 0.01;
    }
    CHECK_THROWS_WITH_AS(fit_robinson(obs, fast()), doctest::Contains("surrogate fully explained by X"),
                         EstimationError);
  }
}

TEST_CASE("kallus calibration recovers tau exactly on paired noise-free data") {
  // Two units per x, one per arm, e = 1/2: pair averages of q Y equal tau(x).
  Engine rng(31);
  std::normal_distribution<double> normal;
  const Index pairs = 40, p = 3;
  LabeledSample exp;
  exp.covariates.resize(2 * pairs, p);
  exp.treatment.resize(2 * pairs);
  exp.surrogate.resize(2 * pairs);
  for (Index k = 0; k < pairs; ++k) {
    std::vector<double> x(p);
    for (auto& v : x) v = normal(rng);
    const double a = std::sin(3.0 * x[2]) + x[0] * x[0];
    for (int w = 0; w < 2; ++w) {
      const Index i = 2 * k + w;
      for (Index j = 0; j < p; ++j) exp.covariates(i, j) = x[static_cast<std::size_t>(j)];
      exp.treatment[i] = w;
      exp.surrogate[i] = a + (w - 0.5) * linear_tau(x);
    }
  }
  const CateStrategy zero = CateStrategy::constant(0.0, CateKind::CausalForest);
  const CateStrategy fused = fit_kallus(exp, zero, Vector::Constant(2 * pairs, 0.5));
  const Vector& theta = *fused.theta();
  REQUIRE(theta.size() == p + 1);
  CHECK(theta[0] == doctest::Approx(1.0).epsilon(1e-10));
  CHECK(theta[1] == doctest::Approx(1.0).epsilon(1e-10));
  CHECK(theta[2] == doctest::Approx(-0.5).epsilon(1e-10));
  CHECK(std::abs(theta[3]) < 1e-10);

  SUBCASE("without intercept the coefficient vector has length p") {
    const CateStrategy lit = fit_kallus(exp, zero, Vector::Constant(2 * pairs, 0.5), CalibrationOptions{false});
    CHECK(lit.theta()->size() == p);
  }
}

TEST_CASE("kallus calibration at the truth and with a linear offset") {
  const LabeledSample exp = randomized(2000, 10, 0.5, 32);
  const Vector e = Vector::Constant(2000, 0.5);
  const CateStrategy truth(CateKind::CausalForest, linear_tau);
  const Vector theta0 = *fit_kallus(exp, truth, e).theta();
  // 0.15 per coordinate: coefficient standard errors here are about 0.05.
  for (Index j = 0; j < theta0.size(); ++j) CHECK(std::abs(theta0[j]) <= 0.15);

  const CateStrategy offset(CateKind::CausalForest, [](std::span<const double> x) { return linear_tau(x) - x[0]; });
  const Vector theta1 = *fit_kallus(exp, offset, e).theta();
  for (Index j = 0; j < theta1.size(); ++j) CHECK(std::abs(theta1[j] - (j == 1 ? 1.0 : 0.0)) <= 0.15);
}

TEST_CASE("calibrated predictor differs from the base by an affine function") {
  const LabeledSample exp = randomized(300, 3, 0.5, 33);
  const CateStrategy base(CateKind::CausalForest, [](std::span<const double> x) { return std::cos(x[0]) * x[2]; });
  const CateStrategy fused = fit_kallus(exp, base, Vector::Constant(300, 0.5));
  const std::vector<double> a{0.3, -1.0, 2.0}, b{1.1, 0.4, -0.7};
  auto diff = [&](double t) {
    std::vector<double> x(3);
    for (int j = 0; j < 3; ++j) x[j] = a[j] + t * (b[j] - a[j]);
    return fused(x) - base(x);
  };
  for (double t : {0.0, 0.7, 2.5}) CHECK(diff(t) - 2 * diff(t + 1) + diff(t + 2) == doctest::Approx(0.0).epsilon(1e-9));
}

TEST_CASE("kallus IV moment identity") {
  // Exact nuisances with a = tau * d, so theta reproduces tau when omega = 0.
  Engine rng(41);
  std::normal_distribution<double> normal;
  const Index n = 60, p = 3;
  LabeledSample exp;
  exp.covariates.resize(n, p);
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < p; ++j) exp.covariates(i, j) = normal(rng);
  exp.treatment = Vector::Zero(n);
  exp.surrogate = Vector::Zero(n);
  exp.instrument = Vector::Zero(n);

  IvNuisances nu;
  nu.mu = [](std::span<const double>) { return 0.2; };
  nu.pi = [](std::span<const double>) { return 1.0 / 3.0; };
  nu.e = [](std::span<const double>) { return 0.3; };
  auto d = [](std::span<const double> x) { return 0.25 + 0.05 * std::tanh(x[1]); };
  nu.gamma = [d](std::span<const double> x) { return d(x) + 0.3 / 3.0; };
  nu.m = [d](std::span<const double> x) { return linear_tau(x) * d(x) + 0.2 / 3.0; };

  const CateStrategy zero = CateStrategy::constant(0.0, CateKind::CausalForest);
  const Vector theta = *fit_kallus_iv(exp, zero, nu).theta();
  CHECK(theta[0] == doctest::Approx(1.0).epsilon(1e-10));
  CHECK(theta[1] == doctest::Approx(1.0).epsilon(1e-10));
  CHECK(theta[2] == doctest::Approx(-0.5).epsilon(1e-10));
  CHECK(std::abs(theta[3]) < 1e-10);

  const CateStrategy at_truth = fit_kallus_iv(exp, CateStrategy(CateKind::CausalForest, linear_tau), nu);
  for (Index j = 0; j < at_truth.theta()->size(); ++j) CHECK(std::abs((*at_truth.theta())[j]) < 1e-10);

  SUBCASE("no instrument strength") {
    IvNuisances flat = nu;
    flat.gamma = [](std::span<const double>) { return 0.1; };  // gamma = e * pi
    CHECK_THROWS_WITH_AS(fit_kallus_iv(exp, zero, flat), doctest::Contains("no instrument strength"),
                         EstimationError);
  }
}

TEST_CASE("IV nuisance forests") {
  Engine rng(42);
  std::normal_distribution<double> normal;
  const Index n = 2000;
  LabeledSample exp;
  exp.covariates.resize(n, 3);
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < 3; ++j) exp.covariates(i, j) = normal(rng);
  exp.treatment.resize(n);
  exp.surrogate.resize(n);
  exp.instrument = Vector(n);
  for (Index i = 0; i < n; ++i) {
    const double z = std::bernoulli_distribution(0.4)(rng) ? 1.0 : 0.0;
    (*exp.instrument)[i] = z;
    exp.treatment[i] = std::bernoulli_distribution(0.5)(rng) ? z : 0.0;
    exp.surrogate[i] = z;  // Y = Z, so E[YZ|x] = pi(x)
  }
  const IvNuisances nu = fit_iv_nuisances(exp, fast());
  double lo = INFINITY, hi = -INFINITY;
  for (int k = 0; k < 11; ++k) {
    const std::vector<double> x{-1.5 + 0.3 * k, 0.0, 0.0};
    CHECK(std::abs(nu.m(x) - nu.pi(x)) <= 0.1);
    for (const auto* f : {&nu.mu, &nu.pi, &nu.e, &nu.m, &nu.gamma}) {
      lo = std::min(lo, (*f)(x));
      hi = std::max(hi, (*f)(x));
    }
    CHECK(nu.pi(x) >= kPropensityClip);
  }
  REQUIRE(nu.in_sample.has_value());
  CHECK(nu.in_sample->rows() == n);

  SUBCASE("constant instrument is clipped") {
    LabeledSample always = exp;
    always.instrument = Vector::Ones(n);
    const IvNuisances c = fit_iv_nuisances(always, fast());
    CHECK(c.pi(std::vector<double>{0.0, 0.0, 0.0}) == doctest::Approx(1.0 - kPropensityClip));
    CHECK((c.in_sample->col(1).array() == 1.0 - kPropensityClip).all());
  }
  SUBCASE("pure noise gives flat predictors") {
    LabeledSample noise = exp;
    for (Index i = 0; i < n; ++i) {
      (*noise.instrument)[i] = std::bernoulli_distribution(0.5)(rng) ? 1.0 : 0.0;
      noise.treatment[i] = std::bernoulli_distribution(0.5)(rng) ? 1.0 : 0.0;
      noise.surrogate[i] = std::bernoulli_distribution(0.5)(rng) ? 1.0 : 0.0;
    }
    const IvNuisances flat = fit_iv_nuisances(noise, fast());
    for (const auto* f : {&flat.mu, &flat.pi, &flat.e, &flat.m, &flat.gamma}) {
      double a = INFINITY, b = -INFINITY;
      for (int k = 0; k < 11; ++k) {
        const double v = (*f)(std::vector<double>{-1.5 + 0.3 * k, 0.0, 0.0});
        a = std::min(a, v);
        b = std::max(b, v);
      }
      CHECK(b - a <= 0.2);
    }
  }
}

TEST_CASE("kallus IV improves a confounded observational CATE where the experiment has data") {
  // Squared error over the experimental covariates, 20 seeds, 50-tree forests.
  // The affine correction is fitted there; extrapolated to the shifted
  // observational region it loses to the base forest.
  DgpConfig cfg;
  cfg.omega = 1.0;
  cfg.support = Support::Shifted;
  cfg.nuisance = false;
  double ise_fused = 0.0, ise_base = 0.0;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    cfg.seed = seed;
    const WorldDraw world = draw_world(cfg, 0.0);
    ForestParams params = fast();
    params.seed = seed;
    const CateStrategy base = fit_causal_forest(world.obs, params);
    const CateStrategy fused = fit_kallus_iv(world.exp, base, fit_iv_nuisances(world.exp, params));
    for (Index i = 0; i < world.exp.rows(); ++i) {
      const auto x = world.exp.row(i);
      ise_fused += std::pow(fused(x) - tau_true(x, cfg), 2);
      ise_base += std::pow(base(x) - tau_true(x, cfg), 2);
    }
  }
  const double n = 20.0 * static_cast<double>(cfg.n_exp);
  MESSAGE("ISE fused " << ise_fused / n << " base " << ise_base / n);
  CHECK(ise_fused < ise_base);
}

TEST_CASE("known and forest propensity sources") {
  const LabeledSample exp = randomized(200, 2, 0.3, 51);
  CHECK((PropensitySource::known(0.3).scores(exp).array() == 0.3).all());
  CHECK_THROWS_AS(PropensitySource::known(1.0), ConfigError);
  const Vector e = PropensitySource::forest(fast()).scores(exp);
  CHECK(e.minCoeff() >= kPropensityClip);
  CHECK(e.maxCoeff() <= 1.0 - kPropensityClip);
}
