#pragma once

// Quantifier-free formulas over linear atoms in basis terms.

#include "nlinv/term.hpp"

#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

namespace nlinv {

enum class Rel { Eq, Ne, Ge, Le, Gt, Lt };

inline const char* rel_text(Rel r) {
  switch (r) {
    case Rel::Eq:
      return "==";
    case Rel::Ne:
      return "!=";
    case Rel::Ge:
      return ">=";
    case Rel::Le:
      return "<=";
    case Rel::Gt:
      return ">";
    case Rel::Lt:
      return "<";
  }
  return "?";
}

inline bool rel_holds(Rel r, const Rational& v) {
  switch (r) {
    case Rel::Eq:
      return v == 0;
    case Rel::Ne:
      return v != 0;
    case Rel::Ge:
      return v >= 0;
    case Rel::Le:
      return v <= 0;
    case Rel::Gt:
      return v > 0;
    case Rel::Lt:
      return v < 0;
  }
  return false;
}

/// sum(coeffs[t] * t) + constant  REL  0
struct Atom {
  Rel rel = Rel::Eq;
  std::map<Term, Rational> coeffs;  // never holds the constant term or zeros
  Rational constant = 0;

  void add(const Term& t, const Rational& c) {
    if (t.is_constant()) {
      constant += c;
      return;
    }
    Rational& slot = coeffs[t];
    slot += c;
    if (slot == 0) coeffs.erase(t);
  }

  Rational value(const dsl::Valuation& env) const {
    Rational v = constant;
    for (const auto& [t, c] : coeffs) v += c * t.eval(env);
    return v;
  }

  bool holds(const dsl::Valuation& env) const { return rel_holds(rel, value(env)); }

  bool degenerate() const { return coeffs.empty(); }

  int degree() const {
    int d = 0;
    for (const auto& kv : coeffs) d = std::max(d, kv.first.degree());
    return d;
  }

  std::vector<Term> ordered_terms() const {
    std::vector<Term> ts;
    for (const auto& kv : coeffs) ts.push_back(kv.first);
    std::sort(ts.begin(), ts.end(), print_before);
    return ts;
  }

  bool operator==(const Atom& o) const { return rel == o.rel && coeffs == o.coeffs && constant == o.constant; }
  bool operator<(const Atom& o) const {
    if (rel != o.rel) return rel < o.rel;
    if (coeffs != o.coeffs) return coeffs < o.coeffs;
    return constant < o.constant;
  }
};

/// Integer coefficients with gcd 1. Equalities and disequalities also fix
/// the sign so the leading printed coefficient is positive; inequalities are
/// only scaled by positive factors, and strict integer bounds are not changed.
inline Atom canonical(Atom a) {
  Integer l = den(a.constant);
  for (const auto& kv : a.coeffs) l = lcm(l, den(kv.second));
  Integer g = 0;
  for (auto& kv : a.coeffs) {
    kv.second *= Rational(l);
    g = gcd(g, num(kv.second));
  }
  a.constant *= Rational(l);
  g = gcd(g, num(a.constant));
  if (g > 1) {
    for (auto& kv : a.coeffs) kv.second /= Rational(g);
    a.constant /= Rational(g);
  }
  if ((a.rel == Rel::Eq || a.rel == Rel::Ne) && !a.coeffs.empty()) {
    if (a.coeffs.at(a.ordered_terms().front()) < 0) {
      for (auto& kv : a.coeffs) kv.second = -kv.second;
      a.constant = -a.constant;
    }
  }
  return a;
}

/// Same atom with the relation written as >= / > (multiplying by -1).
inline Atom flip_to_ge(Atom a) {
  if (a.rel == Rel::Le || a.rel == Rel::Lt) {
    for (auto& kv : a.coeffs) kv.second = -kv.second;
    a.constant = -a.constant;
    a.rel = a.rel == Rel::Le ? Rel::Ge : Rel::Gt;
  }
  return a;
}

inline std::string to_string(const Atom& a) {
  std::ostringstream os;
  bool first = true;
  for (const auto& t : a.ordered_terms()) {
    Rational c = a.coeffs.at(t);
    bool neg = c < 0;
    Rational mag = neg ? Rational(-c) : c;
    if (first)
      os << (neg ? "-" : "");
    else
      os << (neg ? " - " : " + ");
    if (mag != 1) {
      os << to_string(mag) << "*";
    }
    os << t.name();
    first = false;
  }
  if (first) os << "0";
  os << " " << rel_text(a.rel) << " " << to_string(Rational(-a.constant));
  return os.str();
}

// ---------------------------------------------------------------------------

struct Formula;
using FormulaPtr = std::shared_ptr<const Formula>;

struct Formula {
  enum class Kind { True, False, And, Or, Not, Atom };
  Kind kind = Kind::True;
  std::vector<FormulaPtr> children;
  nlinv::Atom atom;
};

inline FormulaPtr f_true() { return std::make_shared<const Formula>(Formula{Formula::Kind::True, {}, {}}); }
inline FormulaPtr f_false() { return std::make_shared<const Formula>(Formula{Formula::Kind::False, {}, {}}); }
inline FormulaPtr f_atom(Atom a) {
  return std::make_shared<const Formula>(Formula{Formula::Kind::Atom, {}, std::move(a)});
}
inline FormulaPtr f_not(FormulaPtr f) { return std::make_shared<const Formula>(Formula{Formula::Kind::Not, {f}, {}}); }

/// Conjunction; the empty conjunction is True and a singleton is its element.
inline FormulaPtr f_and(std::vector<FormulaPtr> fs) {
  if (fs.empty()) return f_true();
  if (fs.size() == 1) return fs[0];
  return std::make_shared<const Formula>(Formula{Formula::Kind::And, std::move(fs), {}});
}

/// Disjunction; the empty disjunction is False and a singleton is its element.
inline FormulaPtr f_or(std::vector<FormulaPtr> fs) {
  if (fs.empty()) return f_false();
  if (fs.size() == 1) return fs[0];
  return std::make_shared<const Formula>(Formula{Formula::Kind::Or, std::move(fs), {}});
}

inline bool eval(const Formula& f, const dsl::Valuation& env) {
  switch (f.kind) {
    case Formula::Kind::True:
      return true;
    case Formula::Kind::False:
      return false;
    case Formula::Kind::Atom:
      return f.atom.holds(env);
    case Formula::Kind::Not:
      return !eval(*f.children[0], env);
    case Formula::Kind::And:
      for (const auto& c : f.children)
        if (!eval(*c, env)) return false;
      return true;
    case Formula::Kind::Or:
      for (const auto& c : f.children)
        if (eval(*c, env)) return true;
      return false;
  }
  return false;
}

/// Infix text in the loop-DSL expression syntax, so it parses back.
inline std::string to_string(const Formula& f) {
  switch (f.kind) {
    case Formula::Kind::True:
      return "true";
    case Formula::Kind::False:
      return "false";
    case Formula::Kind::Atom:
      return to_string(f.atom);
    case Formula::Kind::Not:
      return "!(" + to_string(*f.children[0]) + ")";
    case Formula::Kind::And:
    case Formula::Kind::Or: {
      std::string sep = f.kind == Formula::Kind::And ? " && " : " || ";
      std::string s;
      for (std::size_t i = 0; i < f.children.size(); ++i) {
        const auto& c = *f.children[i];
        bool wrap = c.kind == Formula::Kind::And || c.kind == Formula::Kind::Or;
        if (i) s += sep;
        s += wrap ? "(" + to_string(c) + ")" : to_string(c);
      }
      return s;
    }
  }
  return "?";
}

inline void collect_atoms(const Formula& f, std::vector<Atom>& out) {
  if (f.kind == Formula::Kind::Atom) out.push_back(f.atom);
  for (const auto& c : f.children) collect_atoms(*c, out);
}

/// Rebuilds the formula with every atom in canonical form.
inline FormulaPtr canonicalize(const FormulaPtr& f) {
  switch (f->kind) {
    case Formula::Kind::Atom:
      return f_atom(canonical(f->atom));
    case Formula::Kind::Not:
      return f_not(canonicalize(f->children[0]));
    case Formula::Kind::And:
    case Formula::Kind::Or: {
      std::vector<FormulaPtr> cs;
      for (const auto& c : f->children) cs.push_back(canonicalize(c));
      return f->kind == Formula::Kind::And ? f_and(cs) : f_or(cs);
    }
    default:
      return f;
  }
}

/// Structural equality (children in order).
inline bool same_formula(const Formula& a, const Formula& b) {
  if (a.kind != b.kind) return false;
  if (a.kind == Formula::Kind::Atom) return a.atom == b.atom;
  if (a.children.size() != b.children.size()) return false;
  for (std::size_t i = 0; i < a.children.size(); ++i)
    if (!same_formula(*a.children[i], *b.children[i])) return false;
  return true;
}

/// Converts a DSL expression into a formula when it is a boolean combination
/// of polynomial comparisons. Throws EvalError otherwise.
inline FormulaPtr from_expr(const dsl::Expr& e);

namespace detail {

using Poly = std::map<Term, Rational>;

inline void poly_add(Poly& a, const Poly& b, const Rational& scale = 1) {
  for (const auto& [t, c] : b) {
    Rational& s = a[t];
    s += c * scale;
    if (s == 0) a.erase(t);
  }
}

inline Poly poly_mul(const Poly& a, const Poly& b) {
  Poly out;
  for (const auto& [ta, ca] : a)
    for (const auto& [tb, cb] : b) poly_add(out, Poly{{ta * tb, ca * cb}});
  return out;
}

inline Poly to_poly(const dsl::Expr& e) {
  using namespace dsl;
  if (auto* n = std::get_if<Number>(&e.node)) return n->value == 0 ? Poly{} : Poly{{Term::one(), n->value}};
  if (auto* v = std::get_if<Var>(&e.node)) return Poly{{Term::var(v->name), 1}};
  if (auto* u = std::get_if<Unary>(&e.node)) {
    if (u->op != UnaryOp::Neg) throw EvalError("boolean operator inside a polynomial");
    Poly p;
    poly_add(p, to_poly(*u->arg), -1);
    return p;
  }
  if (auto* c = std::get_if<Call>(&e.node)) {
    auto* a = std::get_if<Var>(&c->args[0]->node);
    auto* b = std::get_if<Var>(&c->args[1]->node);
    if (!a || !b) throw EvalError("external call arguments must be variables in an invariant");
    return Poly{{Term::external(c->fn, a->name, b->name), 1}};
  }
  auto* b = std::get_if<Binary>(&e.node);
  if (!b) throw EvalError("conditional expressions are not allowed in an invariant");
  Poly l = to_poly(*b->lhs);
  switch (b->op) {
    case BinaryOp::Add:
      poly_add(l, to_poly(*b->rhs));
      return l;
    case BinaryOp::Sub:
      poly_add(l, to_poly(*b->rhs), -1);
      return l;
    case BinaryOp::Mul:
      return poly_mul(l, to_poly(*b->rhs));
    case BinaryOp::Div: {
      Poly r = to_poly(*b->rhs);
      if (r.size() > 1 || (r.size() == 1 && !r.begin()->first.is_constant()))
        throw EvalError("division by a non-constant in an invariant");
      if (r.empty()) throw EvalError("division by zero");
      Poly out;
      poly_add(out, l, 1 / r.begin()->second);
      return out;
    }
    case BinaryOp::Pow: {
      auto k = std::get<Number>(b->rhs->node).value;
      Poly out{{Term::one(), 1}};
      for (Integer i = 0; i < num(k); ++i) out = poly_mul(out, l);
      return out;
    }
    default:
      throw EvalError("comparison inside a polynomial");
  }
}

}  // namespace detail

inline FormulaPtr from_expr(const dsl::Expr& e) {
  using namespace dsl;
  if (auto* b = std::get_if<Boolean>(&e.node)) return b->value ? f_true() : f_false();
  if (auto* u = std::get_if<Unary>(&e.node)) {
    if (u->op != UnaryOp::Not) throw EvalError("expected a boolean expression");
    return f_not(from_expr(*u->arg));
  }
  auto* b = std::get_if<Binary>(&e.node);
  if (!b) throw EvalError("expected a boolean expression");
  if (b->op == BinaryOp::And || b->op == BinaryOp::Or) {
    std::vector<FormulaPtr> cs{from_expr(*b->lhs), from_expr(*b->rhs)};
    return b->op == BinaryOp::And ? f_and(cs) : f_or(cs);
  }
  Rel rel;
  switch (b->op) {
    case BinaryOp::Eq:
      rel = Rel::Eq;
      break;
    case BinaryOp::Ne:
      rel = Rel::Ne;
      break;
    case BinaryOp::Ge:
      rel = Rel::Ge;
      break;
    case BinaryOp::Le:
      rel = Rel::Le;
      break;
    case BinaryOp::Gt:
      rel = Rel::Gt;
      break;
    case BinaryOp::Lt:
      rel = Rel::Lt;
      break;
    default:
      throw EvalError("expected a comparison");
  }
  nlinv::detail::Poly p = nlinv::detail::to_poly(*b->lhs);
  nlinv::detail::poly_add(p, nlinv::detail::to_poly(*b->rhs), -1);
  Atom a;
  a.rel = rel;
  for (const auto& [t, c] : p) a.add(t, c);
  return f_atom(a);
}

inline FormulaPtr parse_formula(std::string_view text) { return from_expr(*dsl::parse_expression(text)); }

}  // namespace nlinv
