#include "surrogate/forest.hpp"

#include "surrogate/errors.hpp"
#include "surrogate/parallel.hpp"
#include "surrogate/random.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace surrogate {

void ForestParams::validate() const {
  if (num_trees < 1) throw ConfigError("num_trees must be at least 1");
  if (!(subsample_fraction > 0.0 && subsample_fraction <= 1.0))
    throw ConfigError("subsample_fraction must lie in (0, 1]");
  if (min_leaf_size < 1) throw ConfigError("min_leaf_size must be at least 1");
  if (!(honesty_fraction > 0.0 && honesty_fraction < 1.0))
    throw ConfigError("honesty_fraction must lie in (0, 1)");
}

std::size_t ForestParams::candidates_for(Index p) const {
  const auto dims = static_cast<std::size_t>(p);
  if (split_candidates_per_node != 0) return std::min(split_candidates_per_node, dims);
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(p)))));
}

double clip_propensity(double e) { return std::clamp(e, kPropensityClip, 1.0 - kPropensityClip); }

double Tree::predict(std::span<const double> x) const {
  std::size_t node = 0;
  while (!nodes_[node].is_leaf()) {
    const auto& n = nodes_[node];
    node = static_cast<std::size_t>(x[static_cast<std::size_t>(n.feature)] <= n.threshold ? n.left : n.right);
  }
  return nodes_[node].value;
}

std::size_t Tree::leaf_count() const {
  return static_cast<std::size_t>(
      std::count_if(nodes_.begin(), nodes_.end(), [](const TreeNode& n) { return n.is_leaf(); }));
}

ForestModel::ForestModel(ForestMode mode, Index dims, std::vector<Tree> trees)
    : mode_(mode), dims_(dims), trees_(std::move(trees)) {
  if (trees_.empty()) throw EstimationError("forest has no trees");
}

double ForestModel::predict_tree(std::size_t tree, std::span<const double> x) const {
  return trees_.at(tree).predict(x);
}

double ForestModel::predict(std::span<const double> x) const {
  if (static_cast<Index>(x.size()) != dims_) {
    std::ostringstream msg;
    msg << "forest expects " << dims_ << " features, got " << x.size();
    throw ValidationError(msg.str());
  }
  double sum = 0.0;
  for (const auto& t : trees_) sum += t.predict(x);
  const double mean = sum / static_cast<double>(trees_.size());
  return mode_ == ForestMode::Propensity ? clip_propensity(mean) : mean;
}

Vector ForestModel::predict(const Matrix& x) const {
  Vector out(x.rows());
  for (Index i = 0; i < x.rows(); ++i) {
    out[i] = predict(std::span<const double>(x.data() + i * x.cols(), static_cast<std::size_t>(x.cols())));
  }
  return out;
}

namespace {

enum class Objective { Mean, Slope, Wald };

/// Training columns for one forest. For Mean only `y` is used; Slope uses the
/// residuals (y, w); Wald uses (y, w, z).
struct TrainingData {
  const Matrix& x;
  Objective objective;
  const Vector& y;
  const Vector* w = nullptr;
  const Vector* z = nullptr;
};

/// Sufficient statistics of a node's honest units.
struct LeafStats {
  double count = 0.0;
  double numerator = 0.0;
  double denominator = 0.0;

  void add(const TrainingData& d, Index i) {
    count += 1.0;
    switch (d.objective) {
      case Objective::Mean:
        numerator += d.y[i];
        denominator += 1.0;
        break;
      case Objective::Slope:
        numerator += d.y[i] * (*d.w)[i];
        denominator += (*d.w)[i] * (*d.w)[i];
        break;
      case Objective::Wald:
        numerator += d.y[i] * (*d.z)[i];
        denominator += (*d.w)[i] * (*d.z)[i];
        break;
    }
  }
};

class TreeGrower {
 public:
  TreeGrower(const TrainingData& data, const ForestParams& params, Engine& engine)
      : data_(data),
        params_(params),
        engine_(engine),
        mtry_(params.candidates_for(data.x.cols())),
        features_(static_cast<std::size_t>(data.x.cols())) {
    std::iota(features_.begin(), features_.end(), 0);
  }

  Tree grow(std::vector<Index> split_rows, std::vector<Index> estimation_rows) {
    std::vector<TreeNode> nodes(1);
    struct Pending {
      std::size_t node;
      std::size_t begin;
      std::size_t end;
    };
    std::vector<Pending> stack{{0, 0, split_rows.size()}};
    while (!stack.empty()) {
      const Pending job = stack.back();
      stack.pop_back();
      std::span<Index> rows(split_rows.data() + job.begin, job.end - job.begin);
      int feature = -1;
      double threshold = 0.0;
      if (!find_split(rows, feature, threshold)) continue;
      const auto mid = std::partition(rows.begin(), rows.end(), [&](Index r) {
        return data_.x(r, feature) <= threshold;
      });
      const std::size_t split_at = job.begin + static_cast<std::size_t>(mid - rows.begin());
      const auto left = nodes.size();
      nodes.emplace_back();
      nodes.emplace_back();
      nodes[job.node].feature = feature;
      nodes[job.node].threshold = threshold;
      nodes[job.node].left = static_cast<int>(left);
      nodes[job.node].right = static_cast<int>(left + 1);
      stack.push_back({left + 1, split_at, job.end});
      stack.push_back({left, job.begin, split_at});
    }
    fill_values(nodes, split_rows, estimation_rows);
    Tree tree(std::move(nodes));
    if (params_.keep_index_sets) {
      std::sort(split_rows.begin(), split_rows.end());
      std::sort(estimation_rows.begin(), estimation_rows.end());
      tree.split_rows = std::move(split_rows);
      tree.estimation_rows = std::move(estimation_rows);
    }
    return tree;
  }

 private:
  /// Pseudo-outcome of every row of the node. Returns false when the node's
  /// local problem is degenerate and it must stay a leaf.
  bool pseudo_outcomes(std::span<const Index> rows) {
    rho_.resize(rows.size());
    const double n = static_cast<double>(rows.size());
    if (data_.objective == Objective::Mean) {
      for (std::size_t k = 0; k < rows.size(); ++k) rho_[k] = data_.y[rows[k]];
      return true;
    }
    const Vector& w = *data_.w;
    const Vector& inst = data_.objective == Objective::Wald ? *data_.z : w;
    double y_bar = 0.0, w_bar = 0.0, z_bar = 0.0;
    for (Index r : rows) {
      y_bar += data_.y[r];
      w_bar += w[r];
      z_bar += inst[r];
    }
    y_bar /= n;
    w_bar /= n;
    z_bar /= n;
    double cross_y = 0.0, cross_w = 0.0;
    for (Index r : rows) {
      cross_y += (data_.y[r] - y_bar) * (inst[r] - z_bar);
      cross_w += (w[r] - w_bar) * (inst[r] - z_bar);
    }
    if (std::abs(cross_w) < kLeafDenominatorFloor) return false;
    const double slope = cross_y / cross_w;
    const double scale = n / cross_w;
    for (std::size_t k = 0; k < rows.size(); ++k) {
      const Index r = rows[k];
      rho_[k] = (inst[r] - z_bar) * (data_.y[r] - y_bar - slope * (w[r] - w_bar)) * scale;
    }
    return true;
  }

  bool find_split(std::span<Index> rows, int& best_feature, double& best_threshold) {
    const std::size_t n = rows.size();
    const std::size_t min_leaf = params_.min_leaf_size;
    if (n < 2 * min_leaf) return false;
    if (!pseudo_outcomes(rows)) return false;

    // Candidate covariates: a partial shuffle, then ascending so that ties go
    // to the lowest index.
    for (std::size_t k = 0; k < mtry_; ++k) {
      std::uniform_int_distribution<std::size_t> pick(k, features_.size() - 1);
      std::swap(features_[k], features_[pick(engine_)]);
    }
    candidates_.assign(features_.begin(), features_.begin() + static_cast<std::ptrdiff_t>(mtry_));
    std::sort(candidates_.begin(), candidates_.end());

    // IV split stabilization: each child keeps min_leaf rows on
    // either side of the node's mean instrument residual.
    const bool stabilize = data_.objective == Objective::Wald && params_.stabilize_splits;
    high_.assign(n, 0);
    std::size_t high_total = 0;
    if (stabilize) {
      const Vector& inst = *data_.z;
      double mean = 0.0;
      for (Index r : rows) mean += inst[r];
      mean /= static_cast<double>(n);
      for (std::size_t k = 0; k < n; ++k) high_total += high_[k] = inst[rows[k]] > mean ? 1 : 0;
      if (high_total < 2 * min_leaf || n - high_total < 2 * min_leaf) return false;
    }

    const double total = std::accumulate(rho_.begin(), rho_.end(), 0.0);
    const double parent_score = total * total / static_cast<double>(n);
    double best_score = parent_score + 1e-12 * (1.0 + std::abs(parent_score));
    bool found = false;

    order_.resize(n);
    for (int feature : candidates_) {
      for (std::size_t k = 0; k < n; ++k) order_[k] = {data_.x(rows[k], feature), rho_[k], high_[k]};
      std::sort(order_.begin(), order_.end(), [](const Entry& a, const Entry& b) { return a.x < b.x; });
      double left_sum = 0.0;
      std::size_t left_high = 0;
      for (std::size_t k = 0; k + 1 < n; ++k) {
        left_sum += order_[k].rho;
        left_high += order_[k].high;
        const std::size_t n_left = k + 1;
        if (n_left < min_leaf) continue;
        if (n - n_left < min_leaf) break;
        if (order_[k].x == order_[k + 1].x) continue;
        if (stabilize) {
          const std::size_t right_high = high_total - left_high;
          if (left_high < min_leaf || n_left - left_high < min_leaf) continue;
          if (right_high < min_leaf || (n - n_left) - right_high < min_leaf) continue;
        }
        const double right_sum = total - left_sum;
        const double score = left_sum * left_sum / static_cast<double>(n_left) +
                             right_sum * right_sum / static_cast<double>(n - n_left);
        if (score > best_score) {
          best_score = score;
          best_feature = feature;
          best_threshold = 0.5 * (order_[k].x + order_[k + 1].x);
          found = true;
        }
      }
    }
    return found;
  }

  bool usable(const LeafStats& s) const {
    if (data_.objective == Objective::Mean) return s.count >= 1.0;
    return s.count >= static_cast<double>(params_.min_leaf_size) &&
           std::abs(s.denominator) >= kLeafDenominatorFloor;
  }

  /// Honest values: every node's estimate comes from estimation rows only.
  /// Nodes whose estimate is unusable inherit their parent's value.
  void fill_values(std::vector<TreeNode>& nodes, std::span<const Index> split_rows,
                   std::span<const Index> estimation_rows) const {
    std::vector<LeafStats> stats(nodes.size());
    for (Index r : estimation_rows) {
      std::size_t node = 0;
      for (;;) {
        stats[node].add(data_, r);
        if (nodes[node].is_leaf()) break;
        const auto& nd = nodes[node];
        node = static_cast<std::size_t>(data_.x(r, nd.feature) <= nd.threshold ? nd.left : nd.right);
      }
    }
    // Root fallback: the whole subsample, then zero.
    if (usable(stats[0])) {
      nodes[0].value = stats[0].numerator / stats[0].denominator;
    } else {
      LeafStats all = stats[0];
      for (Index r : split_rows) all.add(data_, r);
      nodes[0].value = std::abs(all.denominator) >= kLeafDenominatorFloor ? all.numerator / all.denominator : 0.0;
    }
    // Children are always appended after their parent.
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      if (nodes[i].is_leaf()) continue;
      for (int child : {nodes[i].left, nodes[i].right}) {
        const auto c = static_cast<std::size_t>(child);
        nodes[c].value = usable(stats[c]) ? stats[c].numerator / stats[c].denominator : nodes[i].value;
      }
    }
  }

  const TrainingData& data_;
  const ForestParams& params_;
  Engine& engine_;
  std::size_t mtry_;
  std::vector<int> features_;
  std::vector<int> candidates_;
  std::vector<double> rho_;
  struct Entry {
    double x;
    double rho;
    std::uint8_t high;
  };
  std::vector<Entry> order_;
  std::vector<std::uint8_t> high_;
};

ForestModel grow_forest(const TrainingData& data, ForestMode mode, const ForestParams& params) {
  const Index n = data.x.rows();
  const auto s = std::clamp<Index>(static_cast<Index>(std::llround(params.subsample_fraction * static_cast<double>(n))), 2, n);
  const auto n_split = std::clamp<Index>(static_cast<Index>(std::llround(params.honesty_fraction * static_cast<double>(s))), 1, s - 1);

  std::vector<Tree> trees(params.num_trees);
  const std::uint64_t tree_seed = derive_seed(params.seed, stream::kTrees);
  parallel_for(params.num_trees, params.num_workers, [&](std::size_t t) {
    Engine engine = make_engine(tree_seed, t);
    std::vector<Index> rows(static_cast<std::size_t>(n));
    std::iota(rows.begin(), rows.end(), Index{0});
    for (Index k = 0; k < s; ++k) {
      std::uniform_int_distribution<Index> pick(k, n - 1);
      std::swap(rows[static_cast<std::size_t>(k)], rows[static_cast<std::size_t>(pick(engine))]);
    }
    std::vector<Index> split_rows(rows.begin(), rows.begin() + n_split);
    std::vector<Index> estimation_rows(rows.begin() + n_split, rows.begin() + s);
    TreeGrower grower(data, params, engine);
    trees[t] = grower.grow(std::move(split_rows), std::move(estimation_rows));
  });
  return ForestModel(mode, data.x.cols(), std::move(trees));
}

void check_rows(const Matrix& x, const Vector& v, const char* what) {
  if (v.size() != x.rows()) {
    std::ostringstream msg;
    msg << "dimension mismatch: " << what << " has " << v.size() << " rows, covariates have " << x.rows();
    throw ValidationError(msg.str());
  }
  if (!v.allFinite()) throw ValidationError(std::string("non-finite value in ") + what);
}

void check_training(const Matrix& x, const Vector& y, const ForestParams& params) {
  params.validate();
  check_rows(x, y, "target");
  if (x.cols() < 1) throw ValidationError("no covariates");
  if (!x.allFinite()) throw ValidationError("non-finite covariate value");
  if (x.rows() < static_cast<Index>(2 * params.min_leaf_size) || x.rows() < 2) {
    std::ostringstream msg;
    msg << "too few rows: " << x.rows() << " (need at least " << std::max<std::size_t>(2, 2 * params.min_leaf_size) << ")";
    throw EstimationError(msg.str());
  }
}

bool both_values_present(const Vector& v) {
  bool zero = false, one = false;
  for (Index i = 0; i < v.size(); ++i) {
    if (v[i] == 0.0) zero = true;
    else if (v[i] == 1.0) one = true;
    else throw ValidationError("binary column has a value other than 0 or 1");
  }
  return zero && one;
}

double correlation(const Vector& a, const Vector& b) {
  const double n = static_cast<double>(a.size());
  const double ma = a.sum() / n, mb = b.sum() / n;
  const Vector ca = a.array() - ma, cb = b.array() - mb;
  const double denom = std::sqrt(ca.squaredNorm() * cb.squaredNorm());
  return denom > 0.0 ? ca.dot(cb) / denom : 0.0;
}

ForestParams centering_params(const ForestParams& params) {
  ForestParams c = params;
  c.seed = derive_seed(params.seed, stream::kCentering);
  c.keep_index_sets = false;
  return c;
}

Matrix select_rows(const Matrix& x, std::span<const Index> rows) {
  Matrix out(static_cast<Index>(rows.size()), x.cols());
  for (std::size_t k = 0; k < rows.size(); ++k) out.row(static_cast<Index>(k)) = x.row(rows[k]);
  return out;
}

template <class Fit>
CrossFit cross_fit(const Matrix& x, const Vector& y, const ForestParams& params, int folds, Fit&& fit) {
  const Index n = x.rows();
  if (folds < 2) throw ConfigError("cross-fitting needs at least 2 folds");
  if (n < folds) throw EstimationError("too few rows for cross-fitting");
  const auto labels = fold_assignment(n, folds, derive_seed(params.seed, stream::kFolds));
  CrossFit result;
  result.out_of_fold.resize(n);
  for (int k = 0; k < folds; ++k) {
    std::vector<Index> train, held;
    for (Index i = 0; i < n; ++i) (labels[static_cast<std::size_t>(i)] == k ? held : train).push_back(i);
    Vector y_train(static_cast<Index>(train.size()));
    for (std::size_t j = 0; j < train.size(); ++j) y_train[static_cast<Index>(j)] = y[train[j]];
    ForestParams fold_params = params;
    fold_params.seed = derive_seed(params.seed, stream::kFolds + 1 + static_cast<std::uint64_t>(k));
    auto model = std::make_shared<const ForestModel>(fit(select_rows(x, train), y_train, fold_params));
    for (Index i : held) {
      result.out_of_fold[i] =
          model->predict(std::span<const double>(x.data() + i * x.cols(), static_cast<std::size_t>(x.cols())));
    }
    result.fold_models.push_back(std::move(model));
  }
  return result;
}

}  // namespace

ForestModel fit_regression(const Matrix& x, const Vector& y, const ForestParams& params) {
  check_training(x, y, params);
  return grow_forest(TrainingData{x, Objective::Mean, y}, ForestMode::Regression, params);
}

ForestModel fit_propensity(const Matrix& x, const Vector& w, const ForestParams& params) {
  check_training(x, w, params);
  if (!both_values_present(w)) throw EstimationError("degenerate treatment: only one class present");
  return grow_forest(TrainingData{x, Objective::Mean, w}, ForestMode::Propensity, params);
}

ForestModel fit_causal_residualized(const Matrix& x, const Vector& w_res, const Vector& y_res,
                                    const ForestParams& params) {
  check_training(x, y_res, params);
  check_rows(x, w_res, "treatment residual");
  return grow_forest(TrainingData{x, Objective::Slope, y_res, &w_res}, ForestMode::Causal, params);
}

ForestModel fit_causal(const Matrix& x, const Vector& w, const Vector& y, const ForestParams& params) {
  check_training(x, y, params);
  check_rows(x, w, "treatment");
  if (!both_values_present(w)) throw EstimationError("degenerate treatment: only one arm present");
  const ForestParams c = centering_params(params);
  const Vector y_res = y - cross_fit_regression(x, y, c);
  const Vector w_res = w - cross_fit_regression(x, w, c);
  return fit_causal_residualized(x, w_res, y_res, params);
}

ForestModel fit_instrumental_residualized(const Matrix& x, const Vector& w_res, const Vector& z_res,
                                          const Vector& y_res, const ForestParams& params) {
  check_training(x, y_res, params);
  check_rows(x, w_res, "treatment residual");
  check_rows(x, z_res, "instrument residual");
  return grow_forest(TrainingData{x, Objective::Wald, y_res, &w_res, &z_res}, ForestMode::Instrumental, params);
}

ForestModel fit_instrumental(const Matrix& x, const Vector& w, const Vector& z, const Vector& y,
                             const ForestParams& params) {
  check_training(x, y, params);
  check_rows(x, w, "treatment");
  check_rows(x, z, "instrument");
  both_values_present(w);
  if (!both_values_present(z)) throw EstimationError("weak instrument: instrument takes a single value");
  if (std::abs(correlation(z, w)) < 0.05) throw EstimationError("weak instrument: |corr(z, w)| < 0.05");
  const ForestParams c = centering_params(params);
  const Vector y_res = y - cross_fit_regression(x, y, c);
  const Vector w_res = w - cross_fit_regression(x, w, c);
  const Vector z_res = z - cross_fit_regression(x, z, c);
  return fit_instrumental_residualized(x, w_res, z_res, y_res, params);
}

std::vector<int> fold_assignment(Index n, int folds, std::uint64_t seed) {
  std::vector<int> labels(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) labels[static_cast<std::size_t>(i)] = static_cast<int>(i % folds);
  Engine engine(seed);
  std::shuffle(labels.begin(), labels.end(), engine);
  return labels;
}

double CrossFit::predict(std::span<const double> x) const {
  double sum = 0.0;
  for (const auto& m : fold_models) sum += m->predict(x);
  return sum / static_cast<double>(fold_models.size());
}

CrossFit cross_fit_regression_models(const Matrix& x, const Vector& y, const ForestParams& params, int folds) {
  check_rows(x, y, "target");
  return cross_fit(x, y, params, folds, [](const Matrix& xt, const Vector& yt, const ForestParams& p) {
    return fit_regression(xt, yt, p);
  });
}

Vector cross_fit_regression(const Matrix& x, const Vector& y, const ForestParams& params, int folds) {
  return cross_fit_regression_models(x, y, params, folds).out_of_fold;
}

Vector cross_fit_propensity(const Matrix& x, const Vector& w, const ForestParams& params, int folds) {
  check_rows(x, w, "treatment");
  if (!both_values_present(w)) throw EstimationError("degenerate treatment: only one class present");
  // A training fold may lose one class; the regression forest on the 0/1
  // target is the same leaf-frequency estimate, so clip it directly.
  Vector e = cross_fit_regression(x, w, params, folds);
  return e.unaryExpr([](double v) { return clip_propensity(v); });
}

}  // namespace surrogate
