#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "vqid/harness.hpp"
#include "vqid/simulation.hpp"

// INI-style config files: [section] headers, key = value lines, '#' or ';'
// comments, whitespace-separated lists. Loaders map sections onto the system
// and experiment structs and report errors with line numbers.

namespace vqid {

class ParsedConfig {
 public:
  using Section = std::map<std::string, std::string>;

  static ParsedConfig from_string(const std::string& text, const std::string& origin = "<string>") {
    ParsedConfig cfg;
    cfg.origin_ = origin;
    std::istringstream in(text);
    std::string line, section;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      std::string s = strip(line);
      if (s.empty() || s[0] == '#' || s[0] == ';') continue;
      if (s.front() == '[') {
        auto close = s.find(']');
        if (close == std::string::npos)
          throw ConfigError(origin + ":" + std::to_string(lineno) + ": unterminated section header");
        section = strip(s.substr(1, close - 1));
        if (section.empty())
          throw ConfigError(origin + ":" + std::to_string(lineno) + ": empty section name");
        cfg.sections_[section];  // allow empty sections
        continue;
      }
      auto eq = s.find('=');
      if (eq == std::string::npos)
        throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected key = value");
      std::string key = strip(s.substr(0, eq));
      std::string value = strip(s.substr(eq + 1));
      if (key.empty())
        throw ConfigError(origin + ":" + std::to_string(lineno) + ": empty key");
      if (section.empty())
        throw ConfigError(origin + ":" + std::to_string(lineno) + ": key outside any [section]");
      cfg.sections_[section][key] = value;
    }
    return cfg;
  }

  static ParsedConfig from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return from_string(buf.str(), path);
  }

  bool has(const std::string& section, const std::string& key) const {
    auto it = sections_.find(section);
    return it != sections_.end() && it->second.count(key) > 0;
  }

  bool has_section(const std::string& section) const { return sections_.count(section) > 0; }

  std::string get_string(const std::string& section, const std::string& key) const {
    auto it = sections_.find(section);
    if (it == sections_.end())
      throw ConfigError(origin_ + ": missing section [" + section + "]");
    auto jt = it->second.find(key);
    if (jt == it->second.end())
      throw ConfigError(origin_ + ": missing key " + section + "." + key);
    return jt->second;
  }

  std::string get_string(const std::string& section, const std::string& key,
                         const std::string& fallback) const {
    return has(section, key) ? sections_.at(section).at(key) : fallback;
  }

  double get_double(const std::string& section, const std::string& key) const {
    return parse_double(section, key, get_string(section, key));
  }

  double get_double(const std::string& section, const std::string& key, double fallback) const {
    if (!has(section, key)) return fallback;
    return parse_double(section, key, sections_.at(section).at(key));
  }

  std::int64_t get_int(const std::string& section, const std::string& key) const {
    return parse_int(section, key, get_string(section, key));
  }

  std::int64_t get_int(const std::string& section, const std::string& key,
                       std::int64_t fallback) const {
    if (!has(section, key)) return fallback;
    return parse_int(section, key, sections_.at(section).at(key));
  }

  std::uint64_t get_u64(const std::string& section, const std::string& key,
                        std::uint64_t fallback) const {
    if (!has(section, key)) return fallback;
    const std::string& v = sections_.at(section).at(key);
    try {
      std::size_t pos = 0;
      std::uint64_t r = std::stoull(v, &pos);
      if (pos != v.size()) throw std::invalid_argument(v);
      return r;
    } catch (const std::exception&) {
      throw ConfigError(origin_ + ": " + section + "." + key + ": not an unsigned integer: " + v);
    }
  }

  bool get_bool(const std::string& section, const std::string& key, bool fallback) const {
    if (!has(section, key)) return fallback;
    std::string v = sections_.at(section).at(key);
    for (auto& c : v) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw ConfigError(origin_ + ": " + section + "." + key + ": not a boolean: " + v);
  }

  std::vector<double> get_double_list(const std::string& section, const std::string& key) const {
    std::vector<double> out;
    std::istringstream in(get_string(section, key));
    std::string tok;
    while (in >> tok) out.push_back(parse_double(section, key, tok));
    if (out.empty())
      throw ConfigError(origin_ + ": " + section + "." + key + ": empty list");
    return out;
  }

  std::vector<std::string> get_string_list(const std::string& section,
                                           const std::string& key) const {
    std::vector<std::string> out;
    std::istringstream in(get_string(section, key));
    std::string tok;
    while (in >> tok) out.push_back(tok);
    return out;
  }

  const std::map<std::string, Section>& sections() const { return sections_; }
  const std::string& origin() const { return origin_; }

 private:
  static std::string strip(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
  }

  double parse_double(const std::string& section, const std::string& key,
                      const std::string& v) const {
    try {
      std::size_t pos = 0;
      double r = std::stod(v, &pos);
      if (pos != v.size()) throw std::invalid_argument(v);
      return r;
    } catch (const std::exception&) {
      throw ConfigError(origin_ + ": " + section + "." + key + ": not a number: " + v);
    }
  }

  std::int64_t parse_int(const std::string& section, const std::string& key,
                         const std::string& v) const {
    try {
      std::size_t pos = 0;
      std::int64_t r = std::stoll(v, &pos);
      if (pos != v.size()) throw std::invalid_argument(v);
      return r;
    } catch (const std::exception&) {
      throw ConfigError(origin_ + ": " + section + "." + key + ": not an integer: " + v);
    }
  }

  std::map<std::string, Section> sections_;
  std::string origin_;
};

inline MappingStrategy parse_strategy(const std::string& s) {
  if (s == "user_table") return MappingStrategy::user_table;
  if (s == "identity_if_allowed") return MappingStrategy::identity_if_allowed;
  if (s == "greedy_capacity") return MappingStrategy::greedy_capacity;
  throw ConfigError("unknown mapping strategy: " + s);
}

inline ConstraintKind parse_constraint_kind(const std::string& s) {
  if (s == "expected_length") return ConstraintKind::expected_length;
  if (s == "excess_probability") return ConstraintKind::excess_probability;
  if (s == "exponential_moment") return ConstraintKind::exponential_moment;
  throw ConfigError("unknown constraint kind: " + s);
}

inline DecoderId parse_decoder(const std::string& s) {
  if (s == "universal") return DecoderId::universal;
  if (s == "mmi") return DecoderId::mmi;
  if (s == "approx_ml") return DecoderId::approx_ml;
  if (s == "exact_ml") return DecoderId::exact_ml;
  throw ConfigError("unknown decoder: " + s);
}

// [source] probs; [channel] row0..rowK; [system]; [policy]; [constraint].
inline SystemConfig load_system_config(const ParsedConfig& cfg) {
  SystemConfig sc;
  sc.source = Distribution(cfg.get_double_list("source", "probs"));
  std::vector<std::vector<double>> rows;
  for (std::size_t r = 0;; ++r) {
    std::string key = "row" + std::to_string(r);
    if (!cfg.has("channel", key)) break;
    rows.push_back(cfg.get_double_list("channel", key));
  }
  if (rows.empty()) throw ConfigError(cfg.origin() + ": [channel] needs row0, row1, ...");
  for (const auto& r : rows)
    if (r.size() != rows.front().size())
      throw ConfigError(cfg.origin() + ": channel rows have inconsistent widths");
  sc.channel = ConditionalKernel(rows);

  sc.n = static_cast<int>(cfg.get_int("system", "n"));
  sc.rate_identification = cfg.get_double("system", "rate_identification");
  sc.ky = static_cast<std::size_t>(cfg.get_int("system", "ky", 0));
  sc.user_cap = cfg.get_u64("system", "user_cap", sc.user_cap);
  sc.subcode_cap = cfg.get_u64("system", "subcode_cap", sc.subcode_cap);
  sc.brute_cap = cfg.get_u64("system", "brute_cap", sc.brute_cap);

  sc.policy.strategy = parse_strategy(
      cfg.get_string("policy", "strategy", "identity_if_allowed"));
  if (sc.policy.strategy == MappingStrategy::user_table)
    throw ConfigError(cfg.origin() +
                      ": user_table mappings are constructed programmatically, not from config");
  sc.policy.delta = cfg.get_double("policy", "delta", sc.policy.delta);
  sc.policy.epsilon = cfg.get_double("policy", "epsilon", sc.policy.epsilon);
  sc.policy.kernel_grid_step =
      cfg.get_double("policy", "kernel_grid_step", sc.policy.kernel_grid_step);

  sc.constraint.kind = parse_constraint_kind(
      cfg.get_string("constraint", "kind", "expected_length"));
  sc.constraint.rate = cfg.get_double("constraint", "rate");
  sc.constraint.excess_exponent =
      cfg.get_double("constraint", "excess_exponent", sc.constraint.excess_exponent);
  sc.constraint.s = cfg.get_double("constraint", "s", sc.constraint.s);
  sc.constraint.lambda = cfg.get_double("constraint", "lambda", sc.constraint.lambda);

  sc.validate();
  return sc;
}

// Adds [experiment] on top of the system sections.
inline ExperimentPlan load_experiment_plan(const ParsedConfig& cfg) {
  ExperimentPlan plan;
  plan.base = load_system_config(cfg);
  if (cfg.has("experiment", "n_list")) {
    for (double v : cfg.get_double_list("experiment", "n_list"))
      plan.n_list.push_back(static_cast<int>(v));
  } else {
    plan.n_list = {plan.base.n};
  }
  plan.trials = cfg.get_u64("experiment", "trials", 100);
  std::vector<std::string> names =
      cfg.has("experiment", "decoders") ? cfg.get_string_list("experiment", "decoders")
                                        : std::vector<std::string>{"universal"};
  for (const auto& nm : names) plan.decoders.push_back(parse_decoder(nm));
  plan.seed = cfg.get_u64("experiment", "seed", 1);
  plan.out_dir = cfg.get_string("experiment", "out_dir", "out");
  plan.fixed_codebook = cfg.get_bool("experiment", "fixed_codebook", false);
  plan.concentration_samples = static_cast<int>(
      cfg.get_int("experiment", "concentration_samples", plan.concentration_samples));
  plan.validate();
  return plan;
}

}  // namespace vqid
