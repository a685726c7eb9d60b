#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "safectl/csv.hpp"
#include "safectl/error.hpp"

namespace safectl {

enum class ConfigType { real, integer, text, boolean, list, path };

struct ConfigKey {
  std::string key;
  ConfigType type;
  std::string default_value;
  std::vector<std::string> choices;  // non-empty restricts a text value
};

inline const std::vector<ConfigKey>& config_schema() {
  using T = ConfigType;
  static const std::vector<ConfigKey> schema = {
      {"system", T::text, "oven", {"oven", "pendulum"}},
      {"controller", T::text, "baseline", {"baseline", "augmented", "excitation", "pd"}},
      {"seed", T::integer, "0", {}},
      {"output_dir", T::path, "out", {}},

      {"oven.k", T::real, "0.2", {}},
      {"oven.temp_on", T::real, "500", {}},
      {"oven.temp_off", T::real, "70", {}},
      {"oven.temp_desired", T::real, "200", {}},

      {"pendulum.mass", T::real, "1", {}},
      {"pendulum.length", T::real, "1", {}},
      {"pendulum.gravity", T::real, "9.81", {}},
      {"pendulum.torque_limit", T::real, "20", {}},
      {"pendulum.kp", T::real, "30", {}},
      {"pendulum.kd", T::real, "8", {}},

      {"sim.dt", T::real, "0.01", {}},
      {"sim.horizon", T::real, "50", {}},
      {"sim.control_period", T::real, "0", {}},
      {"sim.x0", T::list, "70", {}},
      {"sim.measurement_noise", T::real, "0", {}},

      {"disturbance.kind", T::text, "none", {"none", "constant", "sinusoid"}},
      {"disturbance.value", T::real, "0", {}},
      {"disturbance.amplitude", T::real, "15", {}},
      {"disturbance.period", T::real, "40", {}},

      {"collect.dt", T::real, "0.05", {}},
      {"collect.horizon", T::real, "2000", {}},
      {"collect.hold", T::real, "5", {}},
      {"collect.x0", T::real, "200", {}},

      {"lander.data", T::path, "", {}},
      {"lander.model", T::path, "", {}},
      {"lander.gamma", T::real, "60", {}},
      {"lander.learning_rate", T::real, "0.01", {}},
      {"lander.epochs", T::integer, "300", {}},
      {"lander.batch_size", T::integer, "32", {}},
      {"lander.dt", T::real, "1", {}},
      {"lander.holdout_fraction", T::real, "0.2", {}},
      {"lander.hidden", T::list, "64", {}},
      {"lander.control_period", T::real, "1", {}},
      {"lander.horizon", T::real, "100", {}},
      {"lander.x0", T::real, "70", {}},
      {"lander.settle_window", T::real, "20", {}},
      {"lander.tolerance", T::real, "1e-10", {}},
      {"lander.max_iterations", T::integer, "1000", {}},

      {"certify.transition", T::text, "oven", {"oven", "scaled"}},
      {"certify.transition_dt", T::real, "1", {}},
      {"certify.gain", T::real, "1.1", {}},
      {"certify.candidate", T::text, "cegis", {"cegis", "analytic"}},
      {"certify.certificate", T::path, "", {}},
      {"certify.epsilon", T::real, "0.5", {}},
      {"certify.lo", T::list, "50", {}},
      {"certify.hi", T::list, "400", {}},
      {"certify.r_min", T::real, "1", {}},
      {"certify.samples", T::integer, "500", {}},
      {"certify.delta", T::real, "0.01", {}},
      {"certify.min_box_width", T::real, "0.001", {}},
      {"certify.max_boxes", T::integer, "200000", {}},
      {"certify.hidden", T::list, "6", {}},
      {"certify.activation", T::text, "sigmoid", {"sigmoid", "tanh", "relu"}},
      {"certify.max_outer", T::integer, "50", {}},
      {"certify.steps_per_round", T::integer, "300", {}},
      {"certify.learning_rate", T::real, "0.02", {}},
      {"certify.roa_resolution", T::integer, "1000", {}},

      {"monitor.trace", T::path, "", {}},
      {"monitor.formula", T::text, "", {}},

      {"sysid.trace", T::path, "", {}},
      {"sysid.degree", T::integer, "2", {}},
      {"sysid.threshold", T::real, "0.05", {}},
      {"sysid.max_iterations", T::integer, "10", {}},
      {"sysid.ridge", T::real, "1e-6", {}},
      {"sysid.sin", T::boolean, "false", {}},
      {"sysid.cos", T::boolean, "false", {}},
      {"sysid.exp", T::boolean, "false", {}},
      {"sysid.noise", T::real, "0", {}},
      {"sysid.gate", T::real, "0.01", {}},
  };
  return schema;
}

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline const ConfigKey* find_key(const std::string& key) {
  for (const auto& k : config_schema())
    if (k.key == key) return &k;
  return nullptr;
}

inline std::vector<double> parse_list(const std::string& text) {
  std::vector<double> out;
  std::string normalized = text;
  std::replace(normalized.begin(), normalized.end(), ',', ' ');
  std::istringstream in(normalized);
  std::string token;
  while (in >> token) out.push_back(csv::parse_double(token));
  return out;
}

inline bool parse_bool(const std::string& text) {
  if (text == "true" || text == "1" || text == "yes" || text == "on") return true;
  if (text == "false" || text == "0" || text == "no" || text == "off") return false;
  throw DomainError("not a boolean: '" + text + "'");
}

inline long long parse_integer(const std::string& text) {
  std::size_t used = 0;
  long long v = 0;
  try {
    v = std::stoll(text, &used);
  } catch (const std::exception&) {
    throw DomainError("not an integer: '" + text + "'");
  }
  if (used != text.size()) throw DomainError("not an integer: '" + text + "'");
  return v;
}

inline void check_value(const ConfigKey& k, const std::string& value) {
  switch (k.type) {
    case ConfigType::real: {
      const double v = csv::parse_double(value);
      if (!std::isfinite(v)) throw DomainError("not a finite number: '" + value + "'");
      return;
    }
    case ConfigType::integer:
      parse_integer(value);
      return;
    case ConfigType::boolean:
      parse_bool(value);
      return;
    case ConfigType::list:
      parse_list(value);
      return;
    case ConfigType::text:
      if (!k.choices.empty() && std::find(k.choices.begin(), k.choices.end(), value) == k.choices.end()) {
        std::string allowed;
        for (const auto& c : k.choices) allowed += (allowed.empty() ? "" : ", ") + c;
        throw DomainError("'" + value + "' is not one of: " + allowed);
      }
      return;
    case ConfigType::path:
      return;
  }
}

}  // namespace detail

/// Flat `section.key = value` document checked against config_schema().
class RunConfig {
 public:
  RunConfig() {
    for (const auto& k : config_schema()) values_[k.key] = k.default_value;
  }

  /// Relative paths are resolved against base_dir.
  static RunConfig parse(std::istream& in, const std::filesystem::path& base_dir = {}) {
    RunConfig cfg;
    cfg.base_dir_ = base_dir;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      const auto hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      line = detail::trim(line);
      if (line.empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos)
        throw ConfigError("config line " + std::to_string(line_no) + ": expected 'key = value'");
      const std::string key = detail::trim(line.substr(0, eq));
      const std::string value = detail::trim(line.substr(eq + 1));
      if (cfg.explicit_.count(key))
        throw ConfigError("config line " + std::to_string(line_no) + ": duplicate key '" + key + "'");
      try {
        cfg.set(key, value);
      } catch (const ConfigError& e) {
        throw ConfigError("config line " + std::to_string(line_no) + ": " + e.what());
      }
    }
    return cfg;
  }

  static RunConfig parse_string(const std::string& text, const std::filesystem::path& base_dir = {}) {
    std::istringstream in(text);
    return parse(in, base_dir);
  }

  static RunConfig load(const std::filesystem::path& file) {
    std::ifstream in(file);
    if (!in) throw ConfigError("cannot open config '" + file.string() + "'");
    return parse(in, std::filesystem::absolute(file).parent_path());
  }

  void set(const std::string& key, const std::string& value) {
    const ConfigKey* k = detail::find_key(key);
    if (!k) throw ConfigError("unknown key '" + key + "'");
    try {
      detail::check_value(*k, value);
    } catch (const DomainError& e) {
      throw ConfigError("key '" + key + "': " + e.what());
    }
    values_[key] = value;
    explicit_.insert({key, true});
  }

  bool is_set(const std::string& key) const { return explicit_.count(key) > 0; }

  double real(const std::string& key) const { return csv::parse_double(raw(key, ConfigType::real)); }

  long long integer(const std::string& key) const { return detail::parse_integer(raw(key, ConfigType::integer)); }

  std::uint64_t seed() const {
    const long long s = integer("seed");
    if (s < 0) throw ConfigError("key 'seed': must be non-negative");
    return static_cast<std::uint64_t>(s);
  }

  const std::string& text(const std::string& key) const { return raw(key, ConfigType::text); }

  bool flag(const std::string& key) const { return detail::parse_bool(raw(key, ConfigType::boolean)); }

  std::vector<double> list(const std::string& key) const { return detail::parse_list(raw(key, ConfigType::list)); }

  std::vector<int> int_list(const std::string& key) const {
    std::vector<int> out;
    for (double v : list(key)) {
      if (v != std::floor(v)) throw ConfigError("key '" + key + "': expected integers");
      out.push_back(static_cast<int>(v));
    }
    return out;
  }

  /// Empty when unset; otherwise absolute.
  std::filesystem::path path(const std::string& key) const {
    const std::string& v = raw(key, ConfigType::path);
    if (v.empty()) return {};
    std::filesystem::path p(v);
    if (p.is_relative()) p = (base_dir_.empty() ? std::filesystem::current_path() : base_dir_) / p;
    return p.lexically_normal();
  }

  const std::filesystem::path& base_dir() const { return base_dir_; }

  /// Every key with its effective value, in schema order.
  void write(std::ostream& out) const {
    for (const auto& k : config_schema()) out << k.key << " = " << values_.at(k.key) << '\n';
  }

 private:
  std::map<std::string, std::string> values_;
  std::map<std::string, bool> explicit_;
  std::filesystem::path base_dir_;

  const std::string& raw(const std::string& key, ConfigType type) const {
    const ConfigKey* k = detail::find_key(key);
    if (!k) throw ConfigError("unknown key '" + key + "'");
    if (k->type != type) throw ConfigError("key '" + key + "' read with the wrong type");
    return values_.at(key);
  }
};

}  // namespace safectl
