#pragma once

// Formula recovery from a trained model, coefficient rationalization and
// pruning of loose bounds.

#include "nlinv/formula.hpp"
#include "nlinv/gcln.hpp"

#include <functional>
#include <set>
#include <string>
#include <vector>

namespace nlinv::extract {

using gcln::Activation;
using gcln::GclnModel;

/// A gated logic tree. Leaves refer to literals by index.
struct GatedNode {
  enum class Kind { TNorm, TConorm, Negation, Leaf };
  Kind kind = Kind::Leaf;
  std::vector<GatedNode> children;
  std::vector<double> gates;  // one per child for TNorm / TConorm
  std::size_t leaf = 0;

  static GatedNode make_leaf(std::size_t i) {
    GatedNode n;
    n.leaf = i;
    return n;
  }
  static GatedNode gated(Kind k, std::vector<GatedNode> cs, std::vector<double> gs) {
    GatedNode n;
    n.kind = k;
    n.children = std::move(cs);
    n.gates = std::move(gs);
    return n;
  }
  static GatedNode negate(GatedNode c) {
    GatedNode n;
    n.kind = Kind::Negation;
    n.children.push_back(std::move(c));
    return n;
  }
};

/// The default architecture: AND over clauses of OR over literals.
inline GatedNode model_tree(const GclnModel& model) {
  std::vector<GatedNode> clauses;
  for (std::size_t c = 0; c < model.m; ++c) {
    std::vector<GatedNode> lits;
    std::vector<double> gs;
    for (std::size_t k = 0; k < model.n; ++k) {
      lits.push_back(GatedNode::make_leaf(c * model.n + k));
      gs.push_back(model.g_or[c * model.n + k]);
    }
    clauses.push_back(GatedNode::gated(GatedNode::Kind::TConorm, std::move(lits), std::move(gs)));
  }
  return GatedNode::gated(GatedNode::Kind::TNorm, std::move(clauses), model.g_and);
}

/// Evaluates the tree with the given leaf truth values.
template <typename T = dlogic::ProductTNorm>
double eval_tree(const GatedNode& n, const std::function<double(std::size_t)>& leaf_value) {
  switch (n.kind) {
    case GatedNode::Kind::Leaf:
      return leaf_value(n.leaf);
    case GatedNode::Kind::Negation:
      return dlogic::negation(eval_tree<T>(n.children[0], leaf_value));
    case GatedNode::Kind::TNorm:
    case GatedNode::Kind::TConorm: {
      std::vector<double> xs;
      for (const auto& c : n.children) xs.push_back(eval_tree<T>(c, leaf_value));
      return n.kind == GatedNode::Kind::TNorm ? dlogic::gated_tnorm<T>(xs, n.gates)
                                              : dlogic::gated_tconorm<T>(xs, n.gates);
    }
  }
  return 0.0;
}

struct ExtractLog {
  std::vector<std::string> warnings;
};

namespace detail {

inline void warn_soft_gates(const GatedNode& n, ExtractLog* log) {
  if (!log) return;
  for (double g : n.gates)
    if (g > 0.1 && g < 0.9) {
      log->warnings.push_back("gate value " + std::to_string(g) + " is not near 0 or 1");
      break;
    }
}

}  // namespace detail

/// Recursive extraction: gated t-norms become conjunctions of the children
/// whose gate exceeds the threshold, gated t-conorms disjunctions, negations
/// negations, and leaves are built by `build_leaf`.
inline FormulaPtr extract_tree(const GatedNode& n, const std::function<FormulaPtr(std::size_t)>& build_leaf,
                               double threshold = 0.5, ExtractLog* log = nullptr) {
  switch (n.kind) {
    case GatedNode::Kind::Leaf:
      return build_leaf(n.leaf);
    case GatedNode::Kind::Negation:
      return f_not(extract_tree(n.children[0], build_leaf, threshold, log));
    case GatedNode::Kind::TNorm:
    case GatedNode::Kind::TConorm: {
      detail::warn_soft_gates(n, log);
      std::vector<FormulaPtr> parts;
      for (std::size_t i = 0; i < n.children.size(); ++i)
        if (n.gates[i] > threshold) parts.push_back(extract_tree(n.children[i], build_leaf, threshold, log));
      return n.kind == GatedNode::Kind::TNorm ? f_and(std::move(parts)) : f_or(std::move(parts));
    }
  }
  return f_true();
}

// ---------------------------------------------------------------------------
// Rationalization

struct RationalizationConfig {
  std::vector<int> max_denominators{10, 15, 30};

  void validate() const {
    if (max_denominators.empty()) throw ConfigError("need at least one maximum denominator");
    for (std::size_t i = 0; i < max_denominators.size(); ++i) {
      if (max_denominators[i] <= 0) throw ConfigError("maximum denominators must be positive");
      if (i && max_denominators[i] <= max_denominators[i - 1])
        throw ConfigError("maximum denominators must be increasing");
    }
  }
};

/// Nearest p/q to x with 1 <= q <= max_den; ties go to the smaller q.
inline Rational best_rational(double x, int max_den) {
  Rational best;
  double best_err = -1.0;
  for (int q = 1; q <= max_den; ++q) {
    double p = std::round(x * q);
    double err = std::abs(x - p / q);
    if (best_err < 0 || err < best_err - 1e-15) {
      best_err = err;
      best = Rational(Integer(static_cast<long long>(p)), Integer(q));
    }
  }
  return best;
}

struct RationalCandidate {
  int max_den = 0;
  std::vector<Integer> w;  // integer coefficients per basis term
  Integer b = 0;
};

/// Scales (w, b) so the largest |w_i| is 1, rounds each entry to the nearest
/// rational with bounded denominator and clears denominators. One candidate
/// per maximum denominator, in order, without duplicates.
inline std::vector<RationalCandidate> rationalize(const std::vector<double>& w, double b,
                                                  const RationalizationConfig& cfg = {}) {
  double big = 0.0;
  for (double x : w) big = std::max(big, std::abs(x));
  std::vector<RationalCandidate> out;
  if (big == 0.0 || !std::isfinite(big)) return out;
  for (int D : cfg.max_denominators) {
    std::vector<Rational> r;
    for (double x : w) r.push_back(best_rational(x / big, D));
    Rational rb = best_rational(b / big, D);
    Integer l = den(rb);
    for (const auto& x : r) l = lcm(l, den(x));
    RationalCandidate c;
    c.max_den = D;
    for (const auto& x : r) c.w.push_back(num(x * Rational(l)));
    c.b = num(rb * Rational(l));
    bool dup = false;
    for (const auto& o : out) dup = dup || (o.w == c.w && o.b == c.b);
    if (!dup) out.push_back(std::move(c));
  }
  return out;
}

inline Rel rel_for(Activation kind) {
  switch (kind) {
    case Activation::Equality:
      return Rel::Eq;
    case Activation::GreaterEq:
      return Rel::Ge;
    case Activation::LessEq:
      return Rel::Le;
  }
  return Rel::Eq;
}

/// Atom  sum(w_i * basis_i) + b  REL  0.
inline Atom make_atom(const std::vector<Term>& basis, const std::vector<Integer>& w, const Integer& b, Rel rel) {
  Atom a;
  a.rel = rel;
  a.constant = Rational(b);
  for (std::size_t i = 0; i < basis.size(); ++i)
    if (w[i] != 0) a.add(basis[i], Rational(w[i]));
  return a;
}

/// Rationalized candidate atoms of one literal, degenerate ones dropped.
inline std::vector<Atom> literal_candidates(const gcln::Literal& lit, const std::vector<Term>& basis,
                                            const RationalizationConfig& cfg = {}) {
  std::vector<Atom> out;
  for (const auto& c : rationalize(lit.w, lit.b, cfg)) {
    Atom a = canonical(make_atom(basis, c.w, c.b, rel_for(lit.kind)));
    if (a.degenerate()) continue;
    if (std::find(out.begin(), out.end(), a) == out.end()) out.push_back(std::move(a));
  }
  return out;
}

/// Recursive descent over the gates; leaves use the first rationalized candidate.
inline FormulaPtr extract_formula(const GclnModel& model, const std::vector<Term>& basis, double threshold = 0.5,
                                  ExtractLog* log = nullptr, const RationalizationConfig& cfg = {}) {
  GatedNode tree = model_tree(model);
  bool any = false;
  for (double g : model.g_and) any = any || g > threshold;
  if (!any && log) log->warnings.push_back("all gates are below the threshold; the model is vacuous");
  return extract_tree(
      tree,
      [&](std::size_t i) {
        auto cands = literal_candidates(model.literals[i], basis, cfg);
        if (cands.empty()) {
          if (log) log->warnings.push_back("literal " + std::to_string(i) + " rounds to a degenerate atom");
          return f_true();
        }
        return f_atom(cands.front());
      },
      threshold, log);
}

// ---------------------------------------------------------------------------
// Data filtering

/// Whether the atom holds exactly on every raw row (columns follow basis).
inline bool holds_on_rows(const Atom& a, const std::vector<Term>& basis, const RationalMatrix& raw) {
  std::vector<std::pair<std::size_t, Rational>> cols;
  for (const auto& [t, c] : a.coeffs) {
    auto it = std::find(basis.begin(), basis.end(), t);
    if (it == basis.end()) return false;
    cols.push_back({static_cast<std::size_t>(it - basis.begin()), c});
  }
  for (const auto& row : raw) {
    Rational v = a.constant;
    for (const auto& [j, c] : cols) v += c * row[j];
    if (!rel_holds(a.rel, v)) return false;
  }
  return true;
}

inline std::vector<Atom> filter_against_data(const std::vector<Atom>& candidates, const std::vector<Term>& basis,
                                             const RationalMatrix& raw) {
  std::vector<Atom> out;
  for (const auto& a : candidates)
    if (holds_on_rows(a, basis, raw)) out.push_back(a);
  return out;
}

/// Same filter over program states (terms are evaluated directly).
inline bool holds_on_states(const Formula& f, const std::vector<dsl::Valuation>& states) {
  for (const auto& s : states) {
    try {
      if (!eval(f, s)) return false;
    } catch (const EvalError&) {
      return false;
    }
  }
  return true;
}

// ---------------------------------------------------------------------------
// Support snapping

/// Basis of the exact null space of the given columns of m, one integer
/// vector (gcd 1) per free column, indexed like `cols`.
inline std::vector<std::vector<Integer>> exact_null_space(const RationalMatrix& m, const std::vector<std::size_t>& cols) {
  const std::size_t n = cols.size();
  std::vector<std::vector<Rational>> rref;  // reduced rows, n entries each
  std::vector<std::size_t> pivots;
  for (const auto& row : m) {
    std::vector<Rational> r;
    for (auto c : cols) r.push_back(row[c]);
    for (std::size_t i = 0; i < rref.size(); ++i) {
      if (r[pivots[i]] == 0) continue;
      Rational f = r[pivots[i]];
      for (std::size_t k = 0; k < n; ++k) r[k] -= f * rref[i][k];
    }
    std::size_t p = 0;
    while (p < n && r[p] == 0) ++p;
    if (p == n) continue;
    Rational inv = 1 / r[p];
    for (auto& x : r) x *= inv;
    for (std::size_t i = 0; i < rref.size(); ++i) {
      if (rref[i][p] == 0) continue;
      Rational f = rref[i][p];
      for (std::size_t k = 0; k < n; ++k) rref[i][k] -= f * r[k];
    }
    rref.push_back(std::move(r));
    pivots.push_back(p);
    if (rref.size() == n) return {};
  }
  std::vector<std::vector<Integer>> out;
  for (std::size_t free = 0; free < n; ++free) {
    if (std::find(pivots.begin(), pivots.end(), free) != pivots.end()) continue;
    std::vector<Rational> v(n, 0);
    v[free] = 1;
    for (std::size_t i = 0; i < rref.size(); ++i) v[pivots[i]] = -rref[i][free];
    Integer l = 1;
    for (const auto& x : v) l = lcm(l, den(x));
    std::vector<Integer> iv;
    Integer g = 0;
    for (const auto& x : v) {
      iv.push_back(num(x * Rational(l)));
      g = gcd(g, iv.back());
    }
    if (g > 1)
      for (auto& x : iv) x /= g;
    out.push_back(std::move(iv));
  }
  return out;
}

/// Exact equalities on the terms an equality literal weights by at least
/// `tolerance` of its largest weight: the null space of the raw data
/// restricted to that support.
inline std::vector<Atom> snap_to_support(const gcln::Literal& lit, const std::vector<Term>& basis,
                                         const RationalMatrix& raw, double tolerance = 0.01) {
  std::vector<Atom> out;
  if (lit.kind != Activation::Equality || raw.empty()) return out;
  double big = 0.0;
  for (double x : lit.w) big = std::max(big, std::abs(x));
  if (!(big > 0.0)) return out;
  std::vector<std::size_t> cols;
  for (std::size_t k = 0; k < lit.w.size(); ++k)
    if (std::abs(lit.w[k]) >= tolerance * big) cols.push_back(k);
  if (cols.size() < 2) return out;
  for (const auto& v : exact_null_space(raw, cols)) {
    Atom a;
    for (std::size_t i = 0; i < cols.size(); ++i)
      if (v[i] != 0) a.add(basis[cols[i]], Rational(v[i]));
    a = canonical(a);
    if (!a.degenerate() && std::find(out.begin(), out.end(), a) == out.end()) out.push_back(std::move(a));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Pruning

/// Closes the OR gate of every inequality literal whose mean activation
/// over X is below threshold. Returns the pruned literal indices.
inline std::vector<std::size_t> prune_loose_bounds(GclnModel& model, const RealMatrix& X, double threshold = 0.8) {
  std::vector<std::size_t> pruned;
  for (std::size_t i = 0; i < model.literals.size(); ++i) {
    if (model.literals[i].kind == Activation::Equality) continue;
    if (gcln::mean_activation(model, i, X) < threshold) {
      model.g_or[i] = 0.0;
      pruned.push_back(i);
    }
  }
  return pruned;
}

}  // namespace nlinv::extract
