#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "surrogate/data_model.hpp"
#include "surrogate/errors.hpp"

#include <cmath>
#include <sstream>
#include <string>

using namespace surrogate;

namespace {

LabeledSample small_experiment() {
  LabeledSample s;
  s.covariates.resize(3, 2);
  s.covariates << 0.1, 1.0, -0.3, 2.0, 0.5, 3.0;
  s.covariate_names = {"a", "b"};
  s.treatment = Vector::Map(std::vector<double>{1, 0, 1}.data(), 3);
  s.surrogate = Vector::Map(std::vector<double>{2.0, 1.1, 3.2}.data(), 3);
  s.group = Group::Experimental;
  return s;
}

std::string message_of(const auto& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.what();
  }
  return {};
}

Schema basic_schema() {
  std::istringstream in("x1 = covariate\nw = treatment\nys = surrogate\n");
  return parse_schema(in);
}

}  // namespace

TEST_CASE("valid sample passes through validate unchanged") {
  const LabeledSample s = small_experiment();
  const LabeledSample v = validate(s);
  CHECK(v.covariates == s.covariates);
  CHECK(v.treatment == s.treatment);
  CHECK(v.surrogate == s.surrogate);
  CHECK_FALSE(v.primary.has_value());
}

TEST_CASE("validate is idempotent") {
  const LabeledSample once = validate(small_experiment());
  const LabeledSample twice = validate(once);
  CHECK(twice.covariates == once.covariates);
  CHECK(twice.surrogate == once.surrogate);
  CHECK(twice.covariate_names == once.covariate_names);
}

TEST_CASE("observational sample without primary is rejected") {
  LabeledSample s = small_experiment();
  s.group = Group::Observational;
  CHECK(message_of([&] { validate(s); }).find("missing primary outcome") != std::string::npos);
}

TEST_CASE("non-binary treatment names its row") {
  LabeledSample s;
  s.covariates = Matrix::Zero(8, 1);
  s.covariate_names = {"x"};
  s.treatment = Vector::Zero(8);
  s.treatment[5] = 2.0;
  s.surrogate = Vector::Ones(8);
  const std::string msg = message_of([&] { validate(s); });
  CHECK(msg.find("row 5") != std::string::npos);
  CHECK(msg.find("treatment") != std::string::npos);
}

TEST_CASE("non-finite surrogate and experimental primary are rejected") {
  LabeledSample s = small_experiment();
  s.surrogate[1] = std::nan("");
  CHECK_THROWS_AS(validate(s), ValidationError);
  s = small_experiment();
  s.primary = Vector::Zero(3);
  CHECK_THROWS_AS(validate(s), ValidationError);
}

TEST_CASE("csv with three rows parses") {
  std::istringstream in("x1,w,ys\n0.1,1,2.0\n-0.3,0,1.1\n0.5,1,3.2");
  const LabeledSample s = parse_csv(in, basic_schema(), Group::Experimental);
  CHECK(s.rows() == 3);
  CHECK(s.dims() == 1);
  CHECK(s.covariates(1, 0) == doctest::Approx(-0.3));
  CHECK(s.treatment[2] == 1.0);
  CHECK(s.surrogate[2] == doctest::Approx(3.2));
}

TEST_CASE("empty csv reports no data rows") {
  std::istringstream empty("");
  CHECK(message_of([&] { parse_csv(empty, basic_schema(), Group::Experimental); }) == "no data rows");
  std::istringstream header_only("x1,w,ys\n");
  CHECK(message_of([&] { parse_csv(header_only, basic_schema(), Group::Experimental); }) == "no data rows");
}

TEST_CASE("NA cell is reported with line and column") {
  std::istringstream in("x1,w,ys\n0.1,1,2.0\n-0.3,0,NA\n");
  const std::string msg = message_of([&] { parse_csv(in, basic_schema(), Group::Experimental); });
  CHECK(msg.find("line 3") != std::string::npos);
  CHECK(msg.find("'ys'") != std::string::npos);
  CHECK(msg.find("NA") != std::string::npos);
}

TEST_CASE("schema errors") {
  std::istringstream bad_role("x1 = feature\n");
  CHECK_THROWS_AS(parse_schema(bad_role), ValidationError);
  std::istringstream no_eq("x1 covariate\n");
  CHECK_THROWS_AS(parse_schema(no_eq), ValidationError);

  std::istringstream unknown_column("x1,w,ys,extra\n1,0,1,9\n");
  CHECK_THROWS_AS(parse_csv(unknown_column, basic_schema(), Group::Experimental), ValidationError);
}

TEST_CASE("categorical columns are one-hot encoded with the first level dropped") {
  std::istringstream schema_text("race = categorical\nage = covariate\nw = treatment\nys = surrogate\n"
                                 "# comment line\nid = ignore\n");
  const Schema schema = parse_schema(schema_text);
  std::istringstream in("id,race,age,w,ys\n1,b,10,1,0.5\n2,a,11,0,0.1\n3,c,12,1,0.7\n4,a,13,0,0.2\n");
  const LabeledSample s = parse_csv(in, schema, Group::Experimental);
  REQUIRE(s.dims() == 3);
  CHECK(s.covariate_names == std::vector<std::string>{"race=b", "race=c", "age"});
  CHECK(s.covariates(0, 0) == 1.0);
  CHECK(s.covariates(0, 1) == 0.0);
  CHECK(s.covariates(1, 0) == 0.0);
  CHECK(s.covariates(1, 1) == 0.0);
  CHECK(s.covariates(2, 1) == 1.0);
  CHECK(s.covariates(3, 2) == 13.0);
}

TEST_CASE("save then load round-trips to full precision") {
  LabeledSample s;
  const Index n = 50;
  s.covariates.resize(n, 3);
  s.covariate_names = {"x1", "x2", "x3"};
  s.treatment.resize(n);
  s.surrogate.resize(n);
  s.primary = Vector(n);
  s.group = Group::Observational;
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < 3; ++j) s.covariates(i, j) = std::sin(1.7 * i + j) * std::pow(10.0, j - 1);
    s.treatment[i] = i % 3 == 0 ? 1 : 0;
    s.surrogate[i] = std::exp(0.05 * i) / 3.0;
    (*s.primary)[i] = -1.0 / (i + 1.0);
  }
  std::stringstream buffer;
  write_csv(buffer, s);
  const LabeledSample back = parse_csv(buffer, schema_for(s), Group::Observational);
  REQUIRE(back.rows() == n);
  REQUIRE(back.primary.has_value());
  // 17 significant digits round-trip doubles exactly.
  CHECK(back.covariates == s.covariates);
  CHECK(back.treatment == s.treatment);
  CHECK(back.surrogate == s.surrogate);
  CHECK(*back.primary == *s.primary);
  CHECK(back.covariate_names == s.covariate_names);
}

TEST_CASE("ground truth round-trips with its location tag") {
  GroundTruth truth;
  truth.sample.covariates.resize(4, 1);
  truth.sample.covariates << 1, 2, 3, 4;
  truth.sample.covariate_names = {"x1"};
  truth.sample.treatment = Vector::Map(std::vector<double>{0, 1, 0, 1}.data(), 4);
  truth.sample.surrogate = Vector::Map(std::vector<double>{0.5, 1.5, 2.5, 3.5}.data(), 4);
  truth.sample.primary = Vector::Map(std::vector<double>{1, 2, 3, 4}.data(), 4);
  truth.sample.group = Group::Observational;
  truth.location = {1, 0, 0, 1};

  std::stringstream buffer;
  write_ground_truth(buffer, truth);
  const GroundTruth back = parse_ground_truth(buffer, schema_for(truth.sample, true));
  CHECK(back.location == truth.location);
  CHECK(back.sample.dims() == 1);
  CHECK(*back.sample.primary == *truth.sample.primary);

  std::stringstream schema_text;
  write_schema(schema_text, schema_for(truth.sample, true));
  const Schema reparsed = parse_schema(schema_text);
  CHECK(reparsed.role_of("loc") == ColumnRole::Location);
  CHECK(reparsed.role_of("yp") == ColumnRole::Primary);
}

TEST_CASE("take_rows keeps the requested order") {
  const LabeledSample s = small_experiment();
  const std::vector<Index> rows{2, 0};
  const LabeledSample t = take_rows(s, rows);
  CHECK(t.rows() == 2);
  CHECK(t.surrogate[0] == doctest::Approx(3.2));
  CHECK(t.surrogate[1] == doctest::Approx(2.0));
  CHECK(t.covariates(0, 1) == 3.0);
}
