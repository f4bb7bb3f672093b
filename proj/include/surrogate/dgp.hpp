#pragma once

#include "surrogate/data_model.hpp"

#include <cstdint>
#include <span>
#include <string>

namespace surrogate {

/// Covariate laws of the two samples.
///   identical: both N(0, I)
///   shifted:   experimental N(0, I), observational N(1, I)
///   contained: experimental Uniform(-1, 1)^p, observational N(0, I)
enum class Support { Identical, Shifted, Contained };

const char* to_string(Support s);
Support parse_support(const std::string& text);

struct DgpConfig {
  double omega = 0.0;
  int kappa_tau = 2;
  bool additive = true;
  bool nuisance = true;
  Support support = Support::Identical;
  int p = 10;
  Index n_exp = 300;
  Index n_obs = 1000;
  std::uint64_t seed = 1;
  /// Debug toggle: drop the sum_{j<=kappa} x_j and x_p^2 terms of Y^P.
  bool prognostic_terms = true;

  void validate() const;
};

double tau_true(std::span<const double> x, const DgpConfig& cfg);
double mu_nuisance(std::span<const double> x, const DgpConfig& cfg);

/// E[Y^P | X = x, Y^S = y]: the true bridge.
double primary_mean(std::span<const double> x, double surrogate, const DgpConfig& cfg);

/// Y^P / Y^S(w) multiplier 2 + x_{p-2} + x_{p-1} x_{p-3}.
double surrogate_slope(std::span<const double> x, const DgpConfig& cfg);

struct WorldDraw {
  LabeledSample exp;  // X, W, Z, Y^S
  LabeledSample obs;  // X, W, Y^S, Y^P
  double truth = 0.0;
};

/// One synthetic world. Both samples follow the same structural equations;
/// the observational treatment reuses the (Z, Q) mechanism with Z dropped.
/// `truth` comes from cached_oracle_tau_p.
WorldDraw draw_world(const DgpConfig& cfg);

/// Same, with the truth supplied by the caller (no oracle run).
WorldDraw draw_world(const DgpConfig& cfg, double truth);

struct OracleResult {
  double value = 0.0;
  double std_error = 0.0;
};

/// Monte Carlo ATE of Y^P over the observational covariate law, with both
/// potential outcomes drawn per unit from common noise.
OracleResult oracle_tau_p(const DgpConfig& cfg, Index n_mc);

inline constexpr Index kOracleDraws = 1'000'000;
inline constexpr std::uint64_t kOracleSeed = 0x0AC1E;

/// oracle_tau_p with kOracleDraws draws and a fixed oracle seed, cached per
/// knob setting (sample sizes and seed are not part of the key). Thread safe.
double cached_oracle_tau_p(const DgpConfig& cfg);

/// A population table in the semi-synthetic format: n units from the
/// observational law, location tag 1{x_j > 0} for j = location_covariate.
GroundTruth make_ground_truth(const DgpConfig& cfg, Index n, int location_covariate);

}  // namespace surrogate
