#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace surrogate {

using Index = Eigen::Index;
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

/// Which study a sample comes from: the (possibly instrumented) experiment
/// or the confounded observational study.
enum class Group { Experimental, Observational };

const char* to_string(Group g);

/// Unit table for one study. Rows are units; the group tag applies to the
/// whole table. Experimental samples never carry the primary outcome and
/// observational samples always do.
struct LabeledSample {
  Matrix covariates;
  std::vector<std::string> covariate_names;
  Vector treatment;
  std::optional<Vector> instrument;
  Vector surrogate;
  std::optional<Vector> primary;
  Group group = Group::Experimental;

  Index rows() const { return covariates.rows(); }
  Index dims() const { return covariates.cols(); }
  std::span<const double> row(Index i) const {
    return {covariates.data() + i * covariates.cols(), static_cast<std::size_t>(covariates.cols())};
  }
};

/// Rows of `s` selected by `rows`, in that order.
LabeledSample take_rows(const LabeledSample& s, std::span<const Index> rows);

/// Point estimate of the primary-outcome ATE over the observational population.
struct AteEstimate {
  double value = 0.0;
  std::string strategy_name;
  Index n_exp = 0;
  Index n_obs = 0;
};

/// Checks every sample invariant and returns the sample unchanged. Throws
/// ValidationError naming the offending row and column.
LabeledSample validate(LabeledSample sample);
void check(const LabeledSample& sample);

enum class ColumnRole {
  Covariate,
  Categorical,  // one-hot encoded at load time, first level dropped
  Treatment,
  Instrument,
  Surrogate,
  Primary,
  Location,
  Ignore,
};

ColumnRole parse_role(const std::string& text);
const char* to_string(ColumnRole role);

/// Role of every CSV column, in any order.
struct Schema {
  std::vector<std::pair<std::string, ColumnRole>> columns;

  std::optional<ColumnRole> role_of(const std::string& column) const;
};

/// Parses `name = role` lines; `#` starts a comment.
Schema parse_schema(std::istream& in);
Schema load_schema(const std::filesystem::path& path);
void write_schema(std::ostream& out, const Schema& schema);

/// Reference table for semi-synthetic runs: an observational-style sample
/// holding both outcomes plus a binary stratum tag (1 = stratum A).
struct GroundTruth {
  LabeledSample sample;
  std::vector<std::uint8_t> location;
};

LabeledSample parse_csv(std::istream& in, const Schema& schema, Group group);
LabeledSample load_csv(const std::filesystem::path& path, const Schema& schema, Group group);

GroundTruth parse_ground_truth(std::istream& in, const Schema& schema);
GroundTruth load_ground_truth(const std::filesystem::path& path, const Schema& schema);

/// Writes covariates, then w, z (if present), ys, yp (if present). Numbers
/// use 17 significant digits so load_csv reproduces them exactly.
void write_csv(std::ostream& out, const LabeledSample& sample);
void save_csv(const std::filesystem::path& path, const LabeledSample& sample);

/// Same layout as write_csv plus a trailing `loc` column.
void write_ground_truth(std::ostream& out, const GroundTruth& truth);

/// Schema matching the layout produced by write_csv / write_ground_truth.
Schema schema_for(const LabeledSample& sample, bool with_location = false);

}  // namespace surrogate
