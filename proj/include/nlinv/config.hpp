#pragma once

// Run configuration: every tunable of the pipeline in one place, loadable
// from a small sectioned key = value text file and echoed into results.
//
//   # comment
//   [train]
//   lr = 0.01
//   max_epochs = 5000

#include "nlinv/extract.hpp"
#include "nlinv/gcln.hpp"
#include "nlinv/solver.hpp"

#include <nlohmann/json.hpp>

#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace nlinv {

struct RunConfig {
  // sampling
  int max_deg = 0;  // 0: the program's //degree annotation, else 2
  std::size_t inputs = 25;
  int input_lo = -20;
  int input_hi = 20;
  std::size_t max_iters = 50;
  int holdout_scale = 4;  // wider input range whose states only screen candidates; <= 1 disables
  bool growth_filter = true;
  double growth_margin = 0.5;
  bool normalize = true;
  double norm_target = 10.0;

  // model
  std::size_t clauses = 10;
  std::size_t literals = 2;
  dlogic::RelaxationConfig relax;
  gcln::GateInit gates;
  bool gated = true;
  bool weight_projection = true;

  // training
  gcln::TrainConfig train = default_train();
  std::size_t max_train_rows = 1500;

  // bounds
  bool learn_bounds = true;
  std::size_t bound_terms = 3;
  int bound_degree = 2;
  std::size_t bound_epochs = 2000;
  double bound_lr = 0.05;

  // extraction
  double gate_threshold = 0.5;
  extract::RationalizationConfig rational;
  double prune_threshold = 0.8;
  bool snap = true;  // exact null space on the learned support when rounding fails
  double snap_tolerance = 0.01;

  // retry ladder
  std::vector<double> dropout{0.3, 0.2, 0.1, 0.0};
  bool fractional = true;
  std::vector<Rational> frac_steps{Rational(1, 2), Rational(1, 4)};
  Rational frac_lo = -2;
  Rational frac_hi = 2;
  std::size_t frac_max_iters = 4;

  // counterexample loop
  std::size_t attempts = 10;
  std::size_t unroll = 3;
  bool minimize = true;  // drop conjuncts the proof does not need
  double houdini_timeout = 10.0;  // per query while pruning candidates
  checker::SolverConfig solver;

  std::uint64_t seed = 0;

  static gcln::TrainConfig default_train() {
    gcln::TrainConfig t;
    t.sigma_start = 10.0;
    return t;
  }

  void validate() const;
  nlohmann::json to_json() const;
  std::string to_text() const;
};

namespace detail {

inline std::string trim(std::string s) {
  auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

inline void parse_value(const std::string& key, const std::string& v, double& out) {
  try {
    std::size_t pos = 0;
    out = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected a number, got '" + v + "'");
  }
}

template <typename I>
  requires std::is_integral_v<I>
void parse_value(const std::string& key, const std::string& v, I& out) {
  if constexpr (std::is_same_v<I, bool>) {
    if (v == "true" || v == "1" || v == "yes") out = true;
    else if (v == "false" || v == "0" || v == "no") out = false;
    else throw ConfigError(key + ": expected true or false, got '" + v + "'");
  } else {
    try {
      std::size_t pos = 0;
      long long x = std::stoll(v, &pos);
      if (pos != v.size()) throw std::invalid_argument(v);
      if (std::is_unsigned_v<I> && x < 0) throw ConfigError(key + ": must not be negative");
      out = static_cast<I>(x);
    } catch (const ConfigError&) {
      throw;
    } catch (const std::exception&) {
      throw ConfigError(key + ": expected an integer, got '" + v + "'");
    }
  }
}

inline void parse_value(const std::string&, const std::string& v, std::string& out) { out = v; }

inline void parse_value(const std::string& key, const std::string& v, Rational& out) {
  try {
    out = parse_rational(v);
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected a rational number, got '" + v + "'");
  }
}

template <typename T>
void parse_value(const std::string& key, const std::string& v, std::vector<T>& out) {
  out.clear();
  for (const auto& item : split_list(v)) {
    T x{};
    parse_value(key, item, x);
    out.push_back(x);
  }
}

inline void parse_value(const std::string& key, const std::string& v, checker::GcdMode& out) {
  if (v == "unsupported") out = checker::GcdMode::Unsupported;
  else if (v == "uninterpreted") out = checker::GcdMode::Uninterpreted;
  else if (v == "axiomatized") out = checker::GcdMode::Axiomatized;
  else throw ConfigError(key + ": expected unsupported, uninterpreted or axiomatized");
}

inline std::string show(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}
inline std::string show(const std::string& v) { return v; }
inline std::string show(const Rational& v) { return to_string(v); }
inline std::string show(bool v) { return v ? "true" : "false"; }
template <typename I>
  requires(std::is_integral_v<I> && !std::is_same_v<I, bool>)
std::string show(I v) {
  return std::to_string(v);
}
inline std::string show(checker::GcdMode m) {
  switch (m) {
    case checker::GcdMode::Unsupported:
      return "unsupported";
    case checker::GcdMode::Uninterpreted:
      return "uninterpreted";
    case checker::GcdMode::Axiomatized:
      return "axiomatized";
  }
  return "?";
}
template <typename T>
std::string show(const std::vector<T>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? ", " : "") + show(v[i]);
  return s;
}

/// Calls f(section, key, field) for every configurable field.
template <typename C, typename F>
void visit_fields(C& c, F&& f) {
  f("data", "max_deg", c.max_deg);
  f("data", "inputs", c.inputs);
  f("data", "input_lo", c.input_lo);
  f("data", "input_hi", c.input_hi);
  f("data", "max_iters", c.max_iters);
  f("data", "holdout_scale", c.holdout_scale);
  f("data", "growth_filter", c.growth_filter);
  f("data", "growth_margin", c.growth_margin);
  f("data", "normalize", c.normalize);
  f("data", "norm_target", c.norm_target);
  f("model", "clauses", c.clauses);
  f("model", "literals", c.literals);
  f("model", "c1", c.relax.c1);
  f("model", "c2", c.relax.c2);
  f("model", "sigma", c.relax.sigma);
  f("model", "epsilon", c.relax.epsilon);
  f("model", "and_gate_init", c.gates.and_gate);
  f("model", "or_gate_init", c.gates.or_gate);
  f("model", "gated", c.gated);
  f("model", "weight_projection", c.weight_projection);
  f("train", "lr", c.train.lr);
  f("train", "lr_decay", c.train.lr_decay);
  f("train", "max_epochs", c.train.max_epochs);
  f("train", "lambda1_init", c.train.lambda1.init);
  f("train", "lambda1_multiplier", c.train.lambda1.multiplier);
  f("train", "lambda1_bound", c.train.lambda1.bound);
  f("train", "lambda2_init", c.train.lambda2.init);
  f("train", "lambda2_multiplier", c.train.lambda2.multiplier);
  f("train", "lambda2_bound", c.train.lambda2.bound);
  f("train", "convergence_tol", c.train.convergence_tol);
  f("train", "patience", c.train.patience);
  f("train", "beta1", c.train.beta1);
  f("train", "beta2", c.train.beta2);
  f("train", "sigma_start", c.train.sigma_start);
  f("train", "sigma_anneal_epochs", c.train.sigma_anneal_epochs);
  f("train", "max_rows", c.max_train_rows);
  f("bounds", "enabled", c.learn_bounds);
  f("bounds", "terms", c.bound_terms);
  f("bounds", "degree", c.bound_degree);
  f("bounds", "epochs", c.bound_epochs);
  f("bounds", "lr", c.bound_lr);
  f("extract", "gate_threshold", c.gate_threshold);
  f("extract", "max_denominators", c.rational.max_denominators);
  f("extract", "prune_threshold", c.prune_threshold);
  f("extract", "snap", c.snap);
  f("extract", "snap_tolerance", c.snap_tolerance);
  f("ladder", "dropout", c.dropout);
  f("ladder", "fractional", c.fractional);
  f("ladder", "frac_steps", c.frac_steps);
  f("ladder", "frac_lo", c.frac_lo);
  f("ladder", "frac_hi", c.frac_hi);
  f("ladder", "frac_max_iters", c.frac_max_iters);
  f("cegis", "attempts", c.attempts);
  f("cegis", "unroll", c.unroll);
  f("cegis", "minimize", c.minimize);
  f("cegis", "houdini_timeout", c.houdini_timeout);
  f("cegis", "seed", c.seed);
  f("solver", "path", c.solver.path);
  f("solver", "timeout", c.solver.timeout_seconds);
  f("solver", "gcd", c.solver.gcd);
}

}  // namespace detail

inline void RunConfig::validate() const {
  relax.validate();
  rational.validate();
  if (max_deg < 0 || max_deg > 8) throw ConfigError("data.max_deg must be between 0 and 8");
  if (inputs == 0) throw ConfigError("data.inputs must be positive");
  if (input_lo > input_hi) throw ConfigError("data.input_lo must not exceed data.input_hi");
  if (max_iters == 0) throw ConfigError("data.max_iters must be positive");
  if (holdout_scale < 0 || holdout_scale > 100) throw ConfigError("data.holdout_scale must be between 0 and 100");
  if (!(norm_target > 0)) throw ConfigError("data.norm_target must be positive");
  if (clauses == 0 || literals == 0) throw ConfigError("model.clauses and model.literals must be positive");
  for (double g : {gates.and_gate, gates.or_gate})
    if (g < 0 || g > 1) throw ConfigError("gate initial values must lie in [0, 1]");
  if (!(train.lr > 0) || !(train.lr_decay > 0) || train.lr_decay > 1) throw ConfigError("bad learning rate schedule");
  if (train.max_epochs == 0) throw ConfigError("train.max_epochs must be positive");
  if (!(bound_lr > 0)) throw ConfigError("bounds.lr must be positive");
  if (bound_terms == 0 || bound_degree < 1) throw ConfigError("bounds.terms and bounds.degree must be positive");
  if (!(gate_threshold > 0 && gate_threshold < 1)) throw ConfigError("extract.gate_threshold must lie in (0, 1)");
  if (prune_threshold < 0 || prune_threshold > 1) throw ConfigError("extract.prune_threshold must lie in [0, 1]");
  if (dropout.empty()) throw ConfigError("ladder.dropout needs at least one rate");
  for (double p : dropout)
    if (p < 0 || p >= 1) throw ConfigError("dropout rates must lie in [0, 1)");
  for (const auto& s : frac_steps)
    if (s <= 0) throw ConfigError("fractional steps must be positive");
  if (frac_lo > frac_hi) throw ConfigError("ladder.frac_lo must not exceed ladder.frac_hi");
  if (!(houdini_timeout > 0)) throw ConfigError("cegis.houdini_timeout must be positive");
  if (attempts == 0) throw ConfigError("cegis.attempts must be positive");
  if (!(solver.timeout_seconds > 0)) throw ConfigError("solver.timeout must be positive");
}

inline nlohmann::json RunConfig::to_json() const {
  nlohmann::json j = nlohmann::json::object();
  detail::visit_fields(*this, [&](const char* sec, const char* key, const auto& v) {
    j[sec][key] = detail::show(v);
  });
  return j;
}

inline std::string RunConfig::to_text() const {
  std::ostringstream os;
  std::string section;
  detail::visit_fields(*this, [&](const char* sec, const char* key, const auto& v) {
    if (section != sec) {
      os << (section.empty() ? "" : "\n") << "[" << sec << "]\n";
      section = sec;
    }
    os << key << " = " << detail::show(v) << "\n";
  });
  return os.str();
}

/// Applies `section.key = value` overrides from text onto cfg.
inline void load_config_text(RunConfig& cfg, std::string_view text) {
  std::istringstream in{std::string(text)};
  std::string line, section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ParseError("malformed section header", lineno, 1);
      section = detail::trim(line.substr(1, line.size() - 2));
      continue;
    }
    auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError("expected key = value", lineno, 1);
    std::string key = detail::trim(line.substr(0, eq));
    std::string value = detail::trim(line.substr(eq + 1));
    if (value.size() >= 2 && value.front() == '"' && value.back() == '"') value = value.substr(1, value.size() - 2);
    bool found = false;
    detail::visit_fields(cfg, [&](const char* sec, const char* k, auto& field) {
      if (found || section != sec || key != k) return;
      found = true;
      try {
        detail::parse_value(section + "." + key, value, field);
      } catch (const ConfigError& e) {
        throw ParseError(e.what(), lineno, static_cast<int>(eq) + 2);
      }
    });
    if (!found) throw ParseError("unknown setting '" + (section.empty() ? key : section + "." + key) + "'", lineno, 1);
  }
}

inline RunConfig load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read config file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  RunConfig cfg;
  load_config_text(cfg, ss.str());
  cfg.validate();
  return cfg;
}

}  // namespace nlinv
