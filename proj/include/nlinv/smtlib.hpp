#pragma once

// SMT-LIB2 scripts for the three loop-invariant conditions:
//   initiation   pre /\ inits            ==> inv
//   consecution  inv /\ guard /\ body    ==> inv'
//   sufficiency  inv /\ !guard           ==> post
// Each script asserts the negation and ends with (check-sat) (get-model).

#include "nlinv/dsl.hpp"
#include "nlinv/formula.hpp"
#include "nlinv/interpreter.hpp"

#include <array>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>

namespace nlinv::checker {

enum class Condition { Initiation, Consecution, Sufficiency };

inline const char* condition_name(Condition c) {
  switch (c) {
    case Condition::Initiation:
      return "initiation";
    case Condition::Consecution:
      return "consecution";
    case Condition::Sufficiency:
      return "sufficiency";
  }
  return "?";
}

inline constexpr std::array<Condition, 3> kConditions{Condition::Initiation, Condition::Consecution,
                                                      Condition::Sufficiency};

/// How calls to gcd reach the solver.
///   Unsupported  conditions that mention gcd are not sent; they stay Unknown.
///   Uninterpreted  gcd is a free function. Unsat is a proof; sat answers are
///                  kept only when they replay with the real gcd.
///   Axiomatized  as Uninterpreted plus quantified defining axioms.
enum class GcdMode { Unsupported, Uninterpreted, Axiomatized };

struct VerificationProblem {
  const dsl::LoopProgram* program = nullptr;
  FormulaPtr invariant;
  FormulaPtr goal;  // when set, initiation and consecution must establish this instead

  const Formula& target() const { return goal ? *goal : *invariant; }
};

struct Script {
  Condition condition;
  std::string text;
  bool uses_gcd = false;
};

using Symbols = std::function<std::string(const std::string&)>;

inline std::string quote(const std::string& name) { return "|" + name + "|"; }

inline std::string smt_rational(const Rational& r) {
  auto lit = [](Integer v) {
    std::string s = v < 0 ? Integer(-v).str() : v.str();
    return v < 0 ? "(- " + s + ")" : s;
  };
  if (is_integer(r)) return lit(num(r));
  return "(/ " + lit(num(r)) + " " + den(r).str() + ")";
}

namespace detail {

inline std::string fold(const char* op, const std::vector<std::string>& xs, const std::string& empty) {
  if (xs.empty()) return empty;
  if (xs.size() == 1) return xs[0];
  std::string s = std::string("(") + op;
  for (const auto& x : xs) s += " " + x;
  return s + ")";
}

/// Value of a variable-free numeric expression, if it is one.
inline std::optional<Rational> constant_value(const dsl::Expr& e) {
  if (!dsl::vars_of(e).empty()) return std::nullopt;
  try {
    return dsl::eval_num(e, {});
  } catch (const Error&) {
    return std::nullopt;
  }
}

struct ExprEmitter {
  const Symbols& sym;
  bool* uses_gcd;

  std::string operator()(const dsl::Expr& e) const {
    using namespace dsl;
    return std::visit(
        [&](const auto& n) -> std::string {
          using T = std::decay_t<decltype(n)>;
          if constexpr (std::is_same_v<T, Number>) {
            return smt_rational(n.value);
          } else if constexpr (std::is_same_v<T, Boolean>) {
            return n.value ? "true" : "false";
          } else if constexpr (std::is_same_v<T, Var>) {
            return sym(n.name);
          } else if constexpr (std::is_same_v<T, Unary>) {
            return std::string(n.op == UnaryOp::Neg ? "(- " : "(not ") + (*this)(*n.arg) + ")";
          } else if constexpr (std::is_same_v<T, Binary>) {
            return binary(n, e.loc);
          } else if constexpr (std::is_same_v<T, Call>) {
            const ExternalFn* fn = find_external(n.fn);
            if (!fn) throw EmitError("unknown function '" + n.fn + "'");
            if (n.fn == "gcd" && uses_gcd) *uses_gcd = true;
            std::string s = "(" + n.fn;
            for (const auto& a : n.args) s += " " + (*this)(*a);
            return s + ")";
          } else {
            return "(ite " + (*this)(*n.cond) + " " + (*this)(*n.then_branch) + " " + (*this)(*n.else_branch) + ")";
          }
        },
        e.node);
  }

  std::string binary(const dsl::Binary& b, dsl::SourceLoc loc) const {
    using dsl::BinaryOp;
    std::string l = (*this)(*b.lhs), r = (*this)(*b.rhs);
    switch (b.op) {
      case BinaryOp::Add:
        return "(+ " + l + " " + r + ")";
      case BinaryOp::Sub:
        return "(- " + l + " " + r + ")";
      case BinaryOp::Mul:
        return "(* " + l + " " + r + ")";
      case BinaryOp::Div: {
        auto lv = constant_value(*b.lhs), rv = constant_value(*b.rhs);
        if (lv && rv && *rv != 0) return smt_rational(*lv / *rv);
        if (rv && *rv != 0) return "(* " + smt_rational(1 / *rv) + " " + l + ")";
        throw EmitError("division by a non-constant at line " + std::to_string(loc.line) + " is not supported");
      }
      case BinaryOp::Pow: {
        auto k = constant_value(*b.rhs);
        if (!k || !is_integer(*k) || *k < 0) throw EmitError("exponent must be a non-negative integer");
        long long n = static_cast<long long>(num(*k));
        if (n == 0) return "1";
        std::vector<std::string> xs(static_cast<std::size_t>(n), l);
        return fold("*", xs, "1");
      }
      case BinaryOp::Eq:
        return "(= " + l + " " + r + ")";
      case BinaryOp::Ne:
        return "(not (= " + l + " " + r + "))";
      case BinaryOp::Lt:
        return "(< " + l + " " + r + ")";
      case BinaryOp::Le:
        return "(<= " + l + " " + r + ")";
      case BinaryOp::Gt:
        return "(> " + l + " " + r + ")";
      case BinaryOp::Ge:
        return "(>= " + l + " " + r + ")";
      case BinaryOp::And:
        return "(and " + l + " " + r + ")";
      case BinaryOp::Or:
        return "(or " + l + " " + r + ")";
    }
    throw EmitError("unsupported operator");
  }
};

}  // namespace detail

inline std::string emit_expr(const dsl::Expr& e, const Symbols& sym, bool* uses_gcd = nullptr) {
  return detail::ExprEmitter{sym, uses_gcd}(e);
}

inline std::string emit_term(const Term& t, const Symbols& sym, bool* uses_gcd = nullptr) {
  if (t.is_external()) {
    if (!dsl::find_external(t.fn)) throw EmitError("unknown function '" + t.fn + "'");
    if (t.fn == "gcd" && uses_gcd) *uses_gcd = true;
    return "(" + t.fn + " " + sym(t.args[0]) + " " + sym(t.args[1]) + ")";
  }
  std::vector<std::string> xs;
  for (const auto& [v, e] : t.factors)
    for (int i = 0; i < e; ++i) xs.push_back(sym(v));
  return detail::fold("*", xs, "1");
}

inline std::string emit_atom(const Atom& a, const Symbols& sym, bool* uses_gcd = nullptr) {
  std::vector<std::string> parts;
  for (const auto& t : a.ordered_terms()) {
    const Rational& c = a.coeffs.at(t);
    std::string tt = emit_term(t, sym, uses_gcd);
    parts.push_back(c == 1 ? tt : "(* " + smt_rational(c) + " " + tt + ")");
  }
  std::string lhs = detail::fold("+", parts, "0");
  std::string rhs = smt_rational(-a.constant);
  switch (a.rel) {
    case Rel::Eq:
      return "(= " + lhs + " " + rhs + ")";
    case Rel::Ne:
      return "(not (= " + lhs + " " + rhs + "))";
    case Rel::Ge:
      return "(>= " + lhs + " " + rhs + ")";
    case Rel::Le:
      return "(<= " + lhs + " " + rhs + ")";
    case Rel::Gt:
      return "(> " + lhs + " " + rhs + ")";
    case Rel::Lt:
      return "(< " + lhs + " " + rhs + ")";
  }
  throw EmitError("unsupported relation");
}

inline std::string emit_formula(const Formula& f, const Symbols& sym, bool* uses_gcd = nullptr) {
  switch (f.kind) {
    case Formula::Kind::True:
      return "true";
    case Formula::Kind::False:
      return "false";
    case Formula::Kind::Atom:
      return emit_atom(f.atom, sym, uses_gcd);
    case Formula::Kind::Not:
      return "(not " + emit_formula(*f.children[0], sym, uses_gcd) + ")";
    case Formula::Kind::And:
    case Formula::Kind::Or: {
      std::vector<std::string> xs;
      for (const auto& c : f.children) xs.push_back(emit_formula(*c, sym, uses_gcd));
      return detail::fold(f.kind == Formula::Kind::And ? "and" : "or", xs,
                          f.kind == Formula::Kind::And ? "true" : "false");
    }
  }
  throw EmitError("unsupported formula");
}

namespace detail {

/// Straight-line assignments in SSA form: each write gets a fresh constant.
struct SsaBuilder {
  std::map<std::string, std::string> current;
  std::vector<std::string> decls;
  std::vector<std::string> asserts;
  int counter = 0;
  bool uses_gcd = false;

  Symbols symbols() const {
    return [this](const std::string& v) {
      auto it = current.find(v);
      if (it == current.end()) throw EmitError("variable '" + v + "' has no value here");
      return it->second;
    };
  }

  void declare(const std::string& v) {
    current[v] = quote(v);
    decls.push_back("(declare-const " + quote(v) + " Int)");
  }

  void assign(const dsl::Assignment& a) {
    std::string rhs = emit_expr(*a.value, symbols(), &uses_gcd);
    std::string name = quote(a.target + "#" + std::to_string(++counter));
    decls.push_back("(declare-const " + name + " Int)");
    asserts.push_back("(assert (= " + name + " " + rhs + "))");
    current[a.target] = name;
  }
};

inline std::string gcd_preamble(GcdMode mode) {
  std::string s = "(declare-fun gcd (Int Int) Int)\n";
  if (mode == GcdMode::Axiomatized) {
    s += "(assert (forall ((a Int) (b Int)) (= (gcd a b) (gcd b a))))\n";
    s += "(assert (forall ((a Int)) (= (gcd a 0) (abs a))))\n";
    s += "(assert (forall ((a Int) (b Int)) (=> (not (= b 0)) (= (gcd a b) (gcd b (mod a b))))))\n";
  }
  return s;
}

inline Script render(Condition c, const SsaBuilder& ssa, const std::vector<std::string>& extra, GcdMode mode) {
  std::ostringstream os;
  os << "; " << condition_name(c) << "\n(set-logic ALL)\n(set-option :produce-models true)\n";
  if (ssa.uses_gcd) os << gcd_preamble(mode);
  for (const auto& d : ssa.decls) os << d << "\n";
  for (const auto& a : ssa.asserts) os << a << "\n";
  for (const auto& a : extra) os << "(assert " << a << ")\n";
  os << "(check-sat)\n(get-model)\n";
  return Script{c, os.str(), ssa.uses_gcd};
}

}  // namespace detail

/// The three scripts, in the order initiation, consecution, sufficiency.
inline std::array<Script, 3> emit_smtlib(const VerificationProblem& vp, GcdMode mode = GcdMode::Uninterpreted) {
  if (!vp.program || !vp.invariant) throw EmitError("verification problem is incomplete");
  const dsl::LoopProgram& p = *vp.program;
  const Formula& inv = *vp.invariant;
  auto vars = p.variables();

  detail::SsaBuilder init;
  for (const auto& v : p.params) init.declare(v);
  init.asserts.push_back("(assert " + emit_expr(*p.pre, init.symbols(), &init.uses_gcd) + ")");
  for (const auto& a : p.inits) init.assign(a);
  std::string inv_after_init = emit_formula(vp.target(), init.symbols(), &init.uses_gcd);

  detail::SsaBuilder cons;
  for (const auto& v : vars) cons.declare(v);
  std::string inv_before = emit_formula(inv, cons.symbols(), &cons.uses_gcd);
  std::string guard = emit_expr(*p.guard, cons.symbols(), &cons.uses_gcd);
  for (const auto& a : p.body) cons.assign(a);
  std::string inv_after = emit_formula(vp.target(), cons.symbols(), &cons.uses_gcd);

  detail::SsaBuilder suff;
  for (const auto& v : vars) suff.declare(v);
  std::string s_inv = emit_formula(inv, suff.symbols(), &suff.uses_gcd);
  std::string s_guard = emit_expr(*p.guard, suff.symbols(), &suff.uses_gcd);
  std::string s_post = emit_expr(*p.post, suff.symbols(), &suff.uses_gcd);

  return {detail::render(Condition::Initiation, init, {"(not " + inv_after_init + ")"}, mode),
          detail::render(Condition::Consecution, cons, {inv_before, guard, "(not " + inv_after + ")"}, mode),
          detail::render(Condition::Sufficiency, suff, {s_inv, "(not " + s_guard + ")", "(not " + s_post + ")"},
                         mode)};
}

/// Whether `state` falsifies the condition when replayed with the exact
/// interpreter (real gcd and mod). Initiation only reads the inputs.
inline bool falsifies(const VerificationProblem& vp, Condition c, const dsl::Valuation& state) {
  const dsl::LoopProgram& p = *vp.program;
  try {
    switch (c) {
      case Condition::Initiation: {
        dsl::Valuation in;
        for (const auto& v : p.params) in[v] = dsl::lookup(state, v);
        if (!dsl::eval_bool(*p.pre, in)) return false;
        return !eval(vp.target(), dsl::run_inits(p, in));
      }
      case Condition::Consecution:
        if (!eval(*vp.invariant, state) || !dsl::eval_bool(*p.guard, state)) return false;
        return !eval(vp.target(), dsl::step(p, state));
      case Condition::Sufficiency:
        return eval(*vp.invariant, state) && !dsl::eval_bool(*p.guard, state) && !dsl::eval_bool(*p.post, state);
    }
  } catch (const Error&) {
    return false;
  }
  return false;
}

}  // namespace nlinv::checker
