#pragma once

// Candidate invariant terms: monomials over program variables and binary
// external-function applications.

#include "nlinv/dsl.hpp"
#include "nlinv/interpreter.hpp"

#include <compare>
#include <string>
#include <utility>
#include <vector>

namespace nlinv {

struct Term {
  // Monomial factors as (variable, exponent > 0), sorted by variable name.
  // Empty means the constant 1.
  std::vector<std::pair<std::string, int>> factors;
  // Non-empty for external terms fn(args[0], args[1]); factors is then empty.
  std::string fn;
  std::vector<std::string> args;

  static Term one() { return {}; }
  static Term var(const std::string& v, int e = 1) {
    Term t;
    t.factors.push_back({v, e});
    return t;
  }
  static Term monomial(std::vector<std::pair<std::string, int>> fs) {
    Term t;
    for (auto& f : fs)
      if (f.second > 0) t.factors.push_back(std::move(f));
    std::sort(t.factors.begin(), t.factors.end());
    // merge repeated variables
    std::vector<std::pair<std::string, int>> merged;
    for (auto& f : t.factors) {
      if (!merged.empty() && merged.back().first == f.first)
        merged.back().second += f.second;
      else
        merged.push_back(f);
    }
    t.factors = std::move(merged);
    return t;
  }
  static Term external(std::string fn, std::string a, std::string b) {
    Term t;
    t.fn = std::move(fn);
    t.args = {std::move(a), std::move(b)};
    return t;
  }

  bool is_external() const { return !fn.empty(); }
  bool is_constant() const { return !is_external() && factors.empty(); }

  int degree() const {
    if (is_external()) return 1;
    int d = 0;
    for (const auto& f : factors) d += f.second;
    return d;
  }

  int exponent(const std::string& v) const {
    for (const auto& f : factors)
      if (f.first == v) return f.second;
    return 0;
  }

  bool mentions(const std::string& v) const {
    if (is_external()) return args[0] == v || args[1] == v;
    return exponent(v) > 0;
  }

  /// `1`, `a`, `t^2`, `a*s`, `gcd(x,y)`.
  std::string name() const {
    if (is_external()) return fn + "(" + args[0] + "," + args[1] + ")";
    if (factors.empty()) return "1";
    std::string s;
    for (const auto& [v, e] : factors) {
      if (!s.empty()) s += "*";
      s += v;
      if (e > 1) s += "^" + std::to_string(e);
    }
    return s;
  }

  Term operator*(const Term& o) const {
    auto fs = factors;
    fs.insert(fs.end(), o.factors.begin(), o.factors.end());
    return monomial(std::move(fs));
  }

  Rational eval(const dsl::Valuation& env) const {
    if (is_external()) {
      const dsl::ExternalFn* f = dsl::find_external(fn);
      if (!f) throw EvalError("unknown function '" + fn + "'");
      return f->evaluate(dsl::lookup(env, args[0]), dsl::lookup(env, args[1]));
    }
    Rational r = 1;
    for (const auto& [v, e] : factors) {
      const Rational& x = dsl::lookup(env, v);
      for (int i = 0; i < e; ++i) r *= x;
    }
    return r;
  }

  auto operator<=>(const Term&) const = default;
};

/// Graded order used for printing: higher degree first, then by name.
inline bool print_before(const Term& a, const Term& b) {
  if (a.is_external() != b.is_external()) return a.is_external();
  if (a.degree() != b.degree()) return a.degree() > b.degree();
  return a.name() < b.name();
}

}  // namespace nlinv
