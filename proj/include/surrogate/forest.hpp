#pragma once

#include "surrogate/data_model.hpp"

#include <cstdint>
#include <memory>
#include <span>
#include <vector>

namespace surrogate {

/// Propensity-style predictions are clipped to [kPropensityClip, 1 - kPropensityClip].
inline constexpr double kPropensityClip = 0.01;

/// Leaves whose ratio denominator falls below this fall back to their parent.
inline constexpr double kLeafDenominatorFloor = 1e-8;

inline constexpr int kCrossFitFolds = 5;

struct ForestParams {
  std::size_t num_trees = 200;
  double subsample_fraction = 0.5;
  std::size_t min_leaf_size = 5;
  /// Covariates tried per split; 0 picks ceil(sqrt(p)).
  std::size_t split_candidates_per_node = 0;
  /// Share of each subsample used to place splits; the rest fills the leaves.
  double honesty_fraction = 0.5;
  /// Instrumental splits keep min_leaf_size rows above and below the node's
  /// mean instrument in each child. No effect on other modes.
  bool stabilize_splits = true;
  std::uint64_t seed = 42;
  /// Threads used to grow trees (0 = hardware concurrency). Never affects results.
  std::size_t num_workers = 1;
  /// Keep each tree's split/estimation row sets for inspection.
  bool keep_index_sets = false;

  void validate() const;
  std::size_t candidates_for(Index p) const;
};

enum class ForestMode { Regression, Propensity, Causal, Instrumental };

struct TreeNode {
  /// -1 marks a leaf.
  int feature = -1;
  double threshold = 0.0;
  int left = -1;
  int right = -1;
  double value = 0.0;

  bool is_leaf() const { return feature < 0; }
};

class Tree {
 public:
  Tree() = default;
  explicit Tree(std::vector<TreeNode> nodes) : nodes_(std::move(nodes)) {}

  double predict(std::span<const double> x) const;
  const std::vector<TreeNode>& nodes() const { return nodes_; }
  std::size_t leaf_count() const;

  /// Filled only when ForestParams::keep_index_sets is set.
  std::vector<Index> split_rows;
  std::vector<Index> estimation_rows;

 private:
  std::vector<TreeNode> nodes_;
};

/// Honest subsampled tree ensemble. Immutable once fitted; prediction is
/// reentrant.
class ForestModel {
 public:
  ForestModel(ForestMode mode, Index dims, std::vector<Tree> trees);

  /// Mean of the trees' predictions (clipped in propensity mode).
  double predict(std::span<const double> x) const;
  Vector predict(const Matrix& x) const;
  double predict_tree(std::size_t tree, std::span<const double> x) const;

  ForestMode mode() const { return mode_; }
  Index dims() const { return dims_; }
  std::size_t num_trees() const { return trees_.size(); }
  const Tree& tree(std::size_t i) const { return trees_[i]; }

 private:
  ForestMode mode_;
  Index dims_;
  std::vector<Tree> trees_;
};

/// Conditional-mean forest; leaves hold the honest mean of y.
ForestModel fit_regression(const Matrix& x, const Vector& y, const ForestParams& params);

/// Leaf-frequency forest on a binary target, predictions clipped.
ForestModel fit_propensity(const Matrix& x, const Vector& w, const ForestParams& params);

/// Causal forest: centers y and w with cross-fitted regression forests, then
/// grows trees on residual-product pseudo-outcomes. A leaf holds
/// sum(ry * rw) / sum(rw^2) over its honest units.
ForestModel fit_causal(const Matrix& x, const Vector& w, const Vector& y, const ForestParams& params);

/// Same, but for pre-centered residuals.
ForestModel fit_causal_residualized(const Matrix& x, const Vector& w_res, const Vector& y_res,
                                    const ForestParams& params);

/// Instrumental forest: leaves hold the local Wald ratio
/// sum(ry * rz) / sum(rw * rz). Throws EstimationError("weak instrument")
/// when |corr(z, w)| < 0.05.
ForestModel fit_instrumental(const Matrix& x, const Vector& w, const Vector& z, const Vector& y,
                             const ForestParams& params);

ForestModel fit_instrumental_residualized(const Matrix& x, const Vector& w_res, const Vector& z_res,
                                          const Vector& y_res, const ForestParams& params);

/// Fold label in [0, folds) for each of n rows: a seeded shuffle of balanced labels.
std::vector<int> fold_assignment(Index n, int folds, std::uint64_t seed);

/// Out-of-fold regression-forest predictions: row i is predicted by a forest
/// that never saw it. Folds and fold forests depend only on params.seed.
Vector cross_fit_regression(const Matrix& x, const Vector& y, const ForestParams& params,
                            int folds = kCrossFitFolds);

/// Out-of-fold predictions together with the fold forests; averaging the
/// fold forests gives a predictor for rows outside the training sample.
struct CrossFit {
  Vector out_of_fold;
  std::vector<std::shared_ptr<const ForestModel>> fold_models;

  double predict(std::span<const double> x) const;
};

CrossFit cross_fit_regression_models(const Matrix& x, const Vector& y, const ForestParams& params,
                                     int folds = kCrossFitFolds);

/// Cross-fitted propensity predictions, clipped.
Vector cross_fit_propensity(const Matrix& x, const Vector& w, const ForestParams& params,
                            int folds = kCrossFitFolds);

double clip_propensity(double e);

}  // namespace surrogate
