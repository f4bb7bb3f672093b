#include "surrogate/data_model.hpp"

#include "surrogate/errors.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>

namespace surrogate {

namespace {

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(first, last - first + 1));
}

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  std::string_view rest(line);
  for (;;) {
    const auto comma = rest.find(',');
    out.push_back(trim(rest.substr(0, comma)));
    if (comma == std::string_view::npos) break;
    rest.remove_prefix(comma + 1);
  }
  return out;
}

std::optional<double> parse_number(const std::string& text) {
  double value = 0.0;
  const char* begin = text.data();
  const char* end = begin + text.size();
  if (begin != end && *begin == '+') ++begin;
  auto [ptr, ec] = std::from_chars(begin, end, value);
  if (ec != std::errc() || ptr != end || begin == end) return std::nullopt;
  return value;
}

void check_vector(const Vector& v, Index n, const char* column) {
  if (v.size() != n) {
    std::ostringstream msg;
    msg << "dimension mismatch: column '" << column << "' has " << v.size() << " entries, expected "
        << n;
    throw ValidationError(msg.str());
  }
  for (Index i = 0; i < n; ++i) {
    if (!std::isfinite(v[i])) {
      std::ostringstream msg;
      msg << "non-finite value at row " << i << ", column '" << column << "'";
      throw ValidationError(msg.str());
    }
  }
}

void check_binary(const Vector& v, const char* column) {
  for (Index i = 0; i < v.size(); ++i) {
    if (v[i] != 0.0 && v[i] != 1.0) {
      std::ostringstream msg;
      msg << "non-binary " << column << " value " << v[i] << " at row " << i;
      throw ValidationError(msg.str());
    }
  }
}

struct ParsedTable {
  LabeledSample sample;
  std::vector<std::uint8_t> location;
  bool has_location = false;
};

ParsedTable parse_table(std::istream& in, const Schema& schema, Group group) {
  std::string line;
  if (!std::getline(in, line) || trim(line).empty()) throw ValidationError("no data rows");
  if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
  const auto header = split_fields(line);

  std::vector<ColumnRole> roles;
  roles.reserve(header.size());
  for (const auto& name : header) {
    const auto role = schema.role_of(name);
    if (!role) throw ValidationError("column '" + name + "' has no role in the schema");
    roles.push_back(*role);
  }
  for (const auto& [name, role] : schema.columns) {
    if (std::find(header.begin(), header.end(), name) == header.end())
      throw ValidationError("schema column '" + name + "' is missing from the header");
  }
  auto count_role = [&](ColumnRole r) { return std::count(roles.begin(), roles.end(), r); };
  for (ColumnRole r : {ColumnRole::Treatment, ColumnRole::Instrument, ColumnRole::Surrogate,
                       ColumnRole::Primary, ColumnRole::Location}) {
    if (count_role(r) > 1) throw ValidationError("schema assigns a single-column role twice");
  }
  if (count_role(ColumnRole::Treatment) != 1) throw ValidationError("schema has no treatment column");
  if (count_role(ColumnRole::Surrogate) != 1) throw ValidationError("schema has no surrogate column");

  // Raw cells first: categorical levels are only known after the last row.
  std::vector<std::vector<std::string>> cells;
  std::vector<std::size_t> line_numbers;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    auto fields = split_fields(line);
    if (fields.size() != header.size()) {
      std::ostringstream msg;
      msg << "line " << line_no << ": expected " << header.size() << " fields, found "
          << fields.size();
      throw ValidationError(msg.str());
    }
    cells.push_back(std::move(fields));
    line_numbers.push_back(line_no);
  }
  if (cells.empty()) throw ValidationError("no data rows");
  const Index n = static_cast<Index>(cells.size());

  auto numeric = [&](std::size_t r, std::size_t c) {
    const auto v = parse_number(cells[r][c]);
    if (!v || !std::isfinite(*v)) {
      std::ostringstream msg;
      msg << "line " << line_numbers[r] << ", column '" << header[c] << "': invalid value '"
          << cells[r][c] << "'";
      throw ValidationError(msg.str());
    }
    return *v;
  };

  // Covariate layout: header order, categoricals expanded in place.
  struct CovariateSource {
    std::size_t column;
    std::optional<std::string> level;
  };
  std::vector<CovariateSource> sources;
  std::vector<std::string> names;
  for (std::size_t c = 0; c < header.size(); ++c) {
    if (roles[c] == ColumnRole::Covariate) {
      sources.push_back({c, std::nullopt});
      names.push_back(header[c]);
    } else if (roles[c] == ColumnRole::Categorical) {
      std::set<std::string> levels;
      for (const auto& row : cells) levels.insert(row[c]);
      for (auto it = std::next(levels.begin()); it != levels.end(); ++it) {
        sources.push_back({c, *it});
        names.push_back(header[c] + "=" + *it);
      }
    }
  }

  ParsedTable table;
  LabeledSample& s = table.sample;
  s.group = group;
  s.covariate_names = names;
  s.covariates.resize(n, static_cast<Index>(sources.size()));
  s.treatment.resize(n);
  s.surrogate.resize(n);
  for (Index r = 0; r < n; ++r) {
    const auto ru = static_cast<std::size_t>(r);
    for (std::size_t k = 0; k < sources.size(); ++k) {
      const auto& src = sources[k];
      s.covariates(r, static_cast<Index>(k)) =
          src.level ? (cells[ru][src.column] == *src.level ? 1.0 : 0.0) : numeric(ru, src.column);
    }
  }
  for (std::size_t c = 0; c < header.size(); ++c) {
    auto fill = [&](Vector& v) {
      v.resize(n);
      for (Index r = 0; r < n; ++r) v[r] = numeric(static_cast<std::size_t>(r), c);
    };
    switch (roles[c]) {
      case ColumnRole::Treatment: fill(s.treatment); break;
      case ColumnRole::Surrogate: fill(s.surrogate); break;
      case ColumnRole::Instrument: fill(s.instrument.emplace()); break;
      case ColumnRole::Primary: fill(s.primary.emplace()); break;
      case ColumnRole::Location: {
        Vector loc;
        fill(loc);
        table.has_location = true;
        table.location.resize(static_cast<std::size_t>(n));
        for (Index r = 0; r < n; ++r) {
          if (loc[r] != 0.0 && loc[r] != 1.0) {
            std::ostringstream msg;
            msg << "line " << line_numbers[static_cast<std::size_t>(r)] << ", column '"
                << header[c] << "': location tag must be 0 or 1";
            throw ValidationError(msg.str());
          }
          table.location[static_cast<std::size_t>(r)] = static_cast<std::uint8_t>(loc[r]);
        }
        break;
      }
      default: break;
    }
  }
  if (s.covariates.cols() == 0) throw ValidationError("schema has no covariate columns");
  check(s);
  return table;
}

std::ifstream open_input(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open '" + path.string() + "'");
  return in;
}

void write_number(std::ostream& out, double v) { out << std::setprecision(17) << v; }

}  // namespace

const char* to_string(Group g) { return g == Group::Experimental ? "E" : "O"; }

LabeledSample take_rows(const LabeledSample& s, std::span<const Index> rows) {
  const Index n = static_cast<Index>(rows.size());
  LabeledSample out;
  out.group = s.group;
  out.covariate_names = s.covariate_names;
  out.covariates.resize(n, s.dims());
  out.treatment.resize(n);
  out.surrogate.resize(n);
  if (s.instrument) out.instrument.emplace(n);
  if (s.primary) out.primary.emplace(n);
  for (Index k = 0; k < n; ++k) {
    const Index r = rows[static_cast<std::size_t>(k)];
    out.covariates.row(k) = s.covariates.row(r);
    out.treatment[k] = s.treatment[r];
    out.surrogate[k] = s.surrogate[r];
    if (s.instrument) (*out.instrument)[k] = (*s.instrument)[r];
    if (s.primary) (*out.primary)[k] = (*s.primary)[r];
  }
  return out;
}

void check(const LabeledSample& s) {
  const Index n = s.covariates.rows();
  const Index p = s.covariates.cols();
  if (n < 1) throw ValidationError("sample has no rows");
  if (p < 1) throw ValidationError("sample has no covariates");
  if (!s.covariate_names.empty() && static_cast<Index>(s.covariate_names.size()) != p)
    throw ValidationError("dimension mismatch: covariate names do not match covariate columns");
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < p; ++j) {
      if (!std::isfinite(s.covariates(i, j))) {
        std::ostringstream msg;
        msg << "non-finite value at row " << i << ", covariate column " << j;
        throw ValidationError(msg.str());
      }
    }
  }
  check_vector(s.treatment, n, "treatment");
  check_binary(s.treatment, "treatment");
  if (s.instrument) {
    check_vector(*s.instrument, n, "instrument");
    check_binary(*s.instrument, "instrument");
  }
  check_vector(s.surrogate, n, "surrogate");
  if (s.group == Group::Observational && !s.primary)
    throw ValidationError("missing primary outcome on observational sample");
  if (s.group == Group::Experimental && s.primary)
    throw ValidationError("experimental sample must not carry a primary outcome");
  if (s.primary) check_vector(*s.primary, n, "primary");
}

LabeledSample validate(LabeledSample sample) {
  check(sample);
  return sample;
}

ColumnRole parse_role(const std::string& text) {
  static const std::map<std::string, ColumnRole> roles = {
      {"covariate", ColumnRole::Covariate}, {"categorical", ColumnRole::Categorical},
      {"treatment", ColumnRole::Treatment}, {"instrument", ColumnRole::Instrument},
      {"surrogate", ColumnRole::Surrogate}, {"primary", ColumnRole::Primary},
      {"location", ColumnRole::Location},   {"ignore", ColumnRole::Ignore},
  };
  const auto it = roles.find(text);
  if (it == roles.end()) throw ValidationError("unknown column role '" + text + "'");
  return it->second;
}

const char* to_string(ColumnRole role) {
  switch (role) {
    case ColumnRole::Covariate: return "covariate";
    case ColumnRole::Categorical: return "categorical";
    case ColumnRole::Treatment: return "treatment";
    case ColumnRole::Instrument: return "instrument";
    case ColumnRole::Surrogate: return "surrogate";
    case ColumnRole::Primary: return "primary";
    case ColumnRole::Location: return "location";
    case ColumnRole::Ignore: return "ignore";
  }
  return "unknown";
}

void write_schema(std::ostream& out, const Schema& schema) {
  for (const auto& [name, role] : schema.columns) out << name << " = " << to_string(role) << '\n';
}

std::optional<ColumnRole> Schema::role_of(const std::string& column) const {
  for (const auto& [name, role] : columns)
    if (name == column) return role;
  return std::nullopt;
}

Schema parse_schema(std::istream& in) {
  Schema schema;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    const auto body = trim(std::string_view(line).substr(0, hash));
    if (body.empty()) continue;
    const auto eq = body.find_first_of("=:");
    if (eq == std::string::npos) {
      throw ValidationError("schema line " + std::to_string(line_no) + ": expected 'column = role'");
    }
    auto name = trim(std::string_view(body).substr(0, eq));
    auto role = trim(std::string_view(body).substr(eq + 1));
    if (schema.role_of(name))
      throw ValidationError("schema line " + std::to_string(line_no) + ": duplicate column '" + name + "'");
    schema.columns.emplace_back(std::move(name), parse_role(role));
  }
  return schema;
}

Schema load_schema(const std::filesystem::path& path) {
  auto in = open_input(path);
  return parse_schema(in);
}

LabeledSample parse_csv(std::istream& in, const Schema& schema, Group group) {
  auto table = parse_table(in, schema, group);
  return std::move(table.sample);
}

LabeledSample load_csv(const std::filesystem::path& path, const Schema& schema, Group group) {
  auto in = open_input(path);
  return parse_csv(in, schema, group);
}

GroundTruth parse_ground_truth(std::istream& in, const Schema& schema) {
  auto table = parse_table(in, schema, Group::Observational);
  if (!table.has_location) throw ValidationError("ground truth needs a location column");
  return {std::move(table.sample), std::move(table.location)};
}

GroundTruth load_ground_truth(const std::filesystem::path& path, const Schema& schema) {
  auto in = open_input(path);
  return parse_ground_truth(in, schema);
}

namespace {

std::vector<std::string> covariate_headers(const LabeledSample& s) {
  if (!s.covariate_names.empty()) return s.covariate_names;
  std::vector<std::string> names;
  for (Index j = 0; j < s.dims(); ++j) names.push_back("x" + std::to_string(j + 1));
  return names;
}

void write_rows(std::ostream& out, const LabeledSample& s, const std::vector<std::uint8_t>* location) {
  const auto names = covariate_headers(s);
  for (const auto& name : names) out << name << ',';
  out << 'w';
  if (s.instrument) out << ",z";
  out << ",ys";
  if (s.primary) out << ",yp";
  if (location) out << ",loc";
  out << '\n';
  for (Index i = 0; i < s.rows(); ++i) {
    for (Index j = 0; j < s.dims(); ++j) {
      write_number(out, s.covariates(i, j));
      out << ',';
    }
    out << s.treatment[i];
    if (s.instrument) out << ',' << (*s.instrument)[i];
    out << ',';
    write_number(out, s.surrogate[i]);
    if (s.primary) {
      out << ',';
      write_number(out, (*s.primary)[i]);
    }
    if (location) out << ',' << static_cast<int>((*location)[static_cast<std::size_t>(i)]);
    out << '\n';
  }
}

}  // namespace

void write_csv(std::ostream& out, const LabeledSample& sample) { write_rows(out, sample, nullptr); }

void save_csv(const std::filesystem::path& path, const LabeledSample& sample) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write '" + path.string() + "'");
  write_csv(out, sample);
}

void write_ground_truth(std::ostream& out, const GroundTruth& truth) {
  write_rows(out, truth.sample, &truth.location);
}

Schema schema_for(const LabeledSample& sample, bool with_location) {
  Schema schema;
  for (const auto& name : covariate_headers(sample)) schema.columns.emplace_back(name, ColumnRole::Covariate);
  schema.columns.emplace_back("w", ColumnRole::Treatment);
  if (sample.instrument) schema.columns.emplace_back("z", ColumnRole::Instrument);
  schema.columns.emplace_back("ys", ColumnRole::Surrogate);
  if (sample.primary) schema.columns.emplace_back("yp", ColumnRole::Primary);
  if (with_location) schema.columns.emplace_back("loc", ColumnRole::Location);
  return schema;
}

}  // namespace surrogate
