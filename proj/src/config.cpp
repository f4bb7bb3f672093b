#include "surrogate/config.hpp"

#include "surrogate/errors.hpp"
#include "surrogate/parallel.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>
#include <istream>
#include <map>
#include <sstream>

namespace surrogate {

namespace {

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return {};
  return s.substr(first, s.find_last_not_of(" \t\r") - first + 1);
}

template <class T>
T parse_number(const std::string& text) {
  T value{};
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end) throw ConfigError("invalid number '" + text + "'");
  return value;
}

double parse_double(const std::string& text) {
  try {
    std::size_t used = 0;
    const double v = std::stod(text, &used);
    if (used != text.size()) throw ConfigError("");
    return v;
  } catch (const std::exception&) {
    throw ConfigError("invalid number '" + text + "'");
  }
}

}  // namespace

bool parse_bool(const std::string& text) {
  if (text == "true" || text == "yes" || text == "on" || text == "1") return true;
  if (text == "false" || text == "no" || text == "off" || text == "0") return false;
  throw ConfigError("invalid boolean '" + text + "'");
}

ScenarioConfig parse_scenario_config(std::istream& in, const std::string& origin) {
  ScenarioConfig sc;
  sc.workers = workers_from_env();
  std::vector<std::string> estimator_names;
  std::map<std::string, std::string> custom;
  std::vector<std::string> custom_order;

  using Setter = std::function<void(const std::string&)>;
  const std::map<std::string, Setter> setters = {
      {"omega", [&](const std::string& v) { sc.dgp.omega = parse_double(v); }},
      {"kappa_tau", [&](const std::string& v) { sc.dgp.kappa_tau = parse_number<int>(v); }},
      {"additive", [&](const std::string& v) { sc.dgp.additive = parse_bool(v); }},
      {"nuisance", [&](const std::string& v) { sc.dgp.nuisance = parse_bool(v); }},
      {"support", [&](const std::string& v) { sc.dgp.support = parse_support(v); }},
      {"p", [&](const std::string& v) { sc.dgp.p = parse_number<int>(v); }},
      {"n_exp", [&](const std::string& v) { sc.dgp.n_exp = parse_number<Index>(v); }},
      {"n_obs", [&](const std::string& v) { sc.dgp.n_obs = parse_number<Index>(v); }},
      {"seed", [&](const std::string& v) { sc.base_seed = parse_number<std::uint64_t>(v); }},
      {"replications", [&](const std::string& v) { sc.replications = parse_number<std::size_t>(v); }},
      {"num_trees", [&](const std::string& v) { sc.options.forest.num_trees = parse_number<int>(v); }},
      {"subsample_fraction", [&](const std::string& v) { sc.options.forest.subsample_fraction = parse_double(v); }},
      {"min_leaf_size", [&](const std::string& v) { sc.options.forest.min_leaf_size = parse_number<int>(v); }},
      {"split_candidates",
       [&](const std::string& v) { sc.options.forest.split_candidates_per_node = parse_number<int>(v); }},
      {"honesty_fraction", [&](const std::string& v) { sc.options.forest.honesty_fraction = parse_double(v); }},
      {"stabilize_splits", [&](const std::string& v) { sc.options.forest.stabilize_splits = parse_bool(v); }},
      {"intercept", [&](const std::string& v) { sc.options.calibration.intercept = parse_bool(v); }},
      {"workers", [&](const std::string& v) { sc.workers = resolve_workers(parse_number<std::size_t>(v)); }},
      {"e_exp",
       [&](const std::string& v) {
         if (v == "forest") sc.options.known_propensity.reset();
         else sc.options.known_propensity = parse_double(v);
       }},
      {"estimators",
       [&](const std::string& v) {
         estimator_names.clear();
         std::stringstream list(v);
         std::string item;
         while (std::getline(list, item, ',')) {
           item = trim(item);
           if (!item.empty()) estimator_names.push_back(item);
         }
       }},
  };

  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto where = origin + ":" + std::to_string(line_no) + ": ";
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + "expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    try {
      if (key.rfind("pipeline.", 0) == 0) {
        const std::string name = key.substr(9);
        if (name.empty()) throw ConfigError("pipeline name is empty");
        parse_pipeline(name, value);  // reject malformed compositions at their line
        if (!custom.count(name)) custom_order.push_back(name);
        custom[name] = value;
        continue;
      }
      const auto it = setters.find(key);
      if (it == setters.end()) throw ConfigError("unknown key '" + key + "'");
      it->second(value);
    } catch (const ConfigError& e) {
      throw ConfigError(where + e.what());
    }
  }

  if (estimator_names.empty()) {
    estimator_names = sc.dgp.omega == 0.0
                          ? std::vector<std::string>{"grf_surrogate", "imputation", "kallus_surrogate"}
                          : std::vector<std::string>{"grf_surrogate", "kallus_iv_surrogate"};
    for (const auto& name : custom_order)
      if (std::find(estimator_names.begin(), estimator_names.end(), name) == estimator_names.end())
        estimator_names.push_back(name);
  }
  for (const auto& name : estimator_names) {
    if (const auto it = custom.find(name); it != custom.end()) sc.estimators.push_back(parse_pipeline(name, it->second));
    else if (is_builtin_pipeline(name)) sc.estimators.push_back(builtin_pipeline(name, sc.dgp.omega));
    else throw ConfigError(origin + ": unknown estimator '" + name + "'");
  }
  sc.validate();
  return sc;
}

ScenarioConfig load_scenario_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open '" + path.string() + "'");
  return parse_scenario_config(in, path.string());
}

}  // namespace surrogate
