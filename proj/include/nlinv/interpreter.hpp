#pragma once

// Exact-rational interpreter for loop programs, trace generation and the
// CSV trace format.

#include "nlinv/dsl.hpp"

#include <cstdint>
#include <random>
#include <sstream>

namespace nlinv::dsl {

using Valuation = std::map<std::string, Rational>;

inline const Rational& lookup(const Valuation& env, const std::string& name) {
  auto it = env.find(name);
  if (it == env.end()) throw EvalError("variable '" + name + "' has no value");
  return it->second;
}

inline bool eval_bool(const Expr& e, const Valuation& env);

inline Rational eval_num(const Expr& e, const Valuation& env) {
  return std::visit(
      [&](const auto& n) -> Rational {
        using T = std::decay_t<decltype(n)>;
        if constexpr (std::is_same_v<T, Number>) {
          return n.value;
        } else if constexpr (std::is_same_v<T, Var>) {
          return lookup(env, n.name);
        } else if constexpr (std::is_same_v<T, Unary>) {
          if (n.op != UnaryOp::Neg) throw EvalError("boolean operator in numeric context");
          return -eval_num(*n.arg, env);
        } else if constexpr (std::is_same_v<T, Binary>) {
          Rational a = eval_num(*n.lhs, env);
          switch (n.op) {
            case BinaryOp::Add:
              return a + eval_num(*n.rhs, env);
            case BinaryOp::Sub:
              return a - eval_num(*n.rhs, env);
            case BinaryOp::Mul:
              return a * eval_num(*n.rhs, env);
            case BinaryOp::Div: {
              Rational b = eval_num(*n.rhs, env);
              if (b == 0) throw EvalError("division by zero");
              return a / b;
            }
            case BinaryOp::Pow: {
              Rational k = eval_num(*n.rhs, env);
              if (!is_integer(k) || k < 0) throw EvalError("exponent must be a non-negative integer");
              Rational r = 1;
              for (Integer i = 0; i < num(k); ++i) r *= a;
              return r;
            }
            default:
              throw EvalError("boolean operator in numeric context");
          }
        } else if constexpr (std::is_same_v<T, Call>) {
          const ExternalFn* fn = find_external(n.fn);
          if (!fn) throw EvalError("unknown function '" + n.fn + "'");
          return fn->evaluate(eval_num(*n.args[0], env), eval_num(*n.args[1], env));
        } else if constexpr (std::is_same_v<T, Conditional>) {
          return eval_bool(*n.cond, env) ? eval_num(*n.then_branch, env) : eval_num(*n.else_branch, env);
        } else {
          throw EvalError("boolean value in numeric context");
        }
      },
      e.node);
}

inline bool eval_bool(const Expr& e, const Valuation& env) {
  if (auto* b = std::get_if<Boolean>(&e.node)) return b->value;
  if (auto* u = std::get_if<Unary>(&e.node)) {
    if (u->op != UnaryOp::Not) throw EvalError("numeric value in boolean context");
    return !eval_bool(*u->arg, env);
  }
  auto* b = std::get_if<Binary>(&e.node);
  if (!b) throw EvalError("numeric value in boolean context");
  switch (b->op) {
    case BinaryOp::And:
      return eval_bool(*b->lhs, env) && eval_bool(*b->rhs, env);
    case BinaryOp::Or:
      return eval_bool(*b->lhs, env) || eval_bool(*b->rhs, env);
    default:
      break;
  }
  Rational x = eval_num(*b->lhs, env);
  Rational y = eval_num(*b->rhs, env);
  switch (b->op) {
    case BinaryOp::Eq:
      return x == y;
    case BinaryOp::Ne:
      return x != y;
    case BinaryOp::Lt:
      return x < y;
    case BinaryOp::Le:
      return x <= y;
    case BinaryOp::Gt:
      return x > y;
    case BinaryOp::Ge:
      return x >= y;
    default:
      throw EvalError("numeric value in boolean context");
  }
}

/// Runs the straight-line code before the loop on top of `params`.
inline Valuation run_inits(const LoopProgram& prog, const Valuation& params) {
  Valuation env;
  for (const auto& p : prog.params) env[p] = lookup(params, p);
  for (const auto& a : prog.inits) env[a.target] = eval_num(*a.value, env);
  return env;
}

/// One execution of the loop body (assignments take effect in order).
inline Valuation step(const LoopProgram& prog, Valuation env) {
  for (const auto& a : prog.body) env[a.target] = eval_num(*a.value, env);
  return env;
}

enum class TraceEnd { Exited, Truncated, Error };

struct Trace {
  std::vector<std::string> columns;  // program variables, then frozen `<v>_0` columns
  std::vector<std::vector<Rational>> rows;
  Valuation init_values;  // params and the state at loop entry
  bool fractional = false;
  TraceEnd end = TraceEnd::Exited;
  std::string error;  // set when end == Error; the failing step starts at the last row

  Valuation row(std::size_t i) const {
    Valuation v;
    for (std::size_t c = 0; c < columns.size(); ++c) v[columns[c]] = rows[i][c];
    return v;
  }
  std::size_t size() const { return rows.size(); }
};

namespace detail {

inline std::vector<Rational> project(const std::vector<std::string>& cols, const Valuation& env) {
  std::vector<Rational> out;
  out.reserve(cols.size());
  for (const auto& c : cols) out.push_back(lookup(env, c));
  return out;
}

/// Logs states from `env` until the guard fails, `max_iters` bodies ran, or
/// evaluation raises. `frozen` holds extra constant columns.
inline Trace run_from(const LoopProgram& prog, Valuation env, const Valuation& frozen, std::size_t max_iters) {
  Trace t;
  t.columns = prog.variables();
  for (const auto& [k, v] : frozen) {
    t.columns.push_back(k);
    env[k] = v;
  }
  t.init_values = env;
  t.rows.push_back(project(t.columns, env));
  for (std::size_t it = 0;; ++it) {
    try {
      if (!eval_bool(*prog.guard, env)) {
        t.end = TraceEnd::Exited;
        return t;
      }
      if (it == max_iters) {
        t.end = TraceEnd::Truncated;
        return t;
      }
      env = step(prog, std::move(env));
    } catch (const EvalError& e) {
      t.end = TraceEnd::Error;
      t.error = e.what();
      return t;
    }
    t.rows.push_back(project(t.columns, env));
  }
}

}  // namespace detail

/// Executes the program from the given inputs. The precondition is checked
/// unless `check_pre` is false.
inline Trace execute_trace(const LoopProgram& prog, const Valuation& params, std::size_t max_iters = 50,
                           bool check_pre = true) {
  Valuation inputs;
  for (const auto& p : prog.params) inputs[p] = lookup(params, p);
  if (check_pre && !eval_bool(*prog.pre, inputs))
    throw EvalError("initial valuation violates the precondition");
  Valuation env;
  try {
    env = run_inits(prog, inputs);
  } catch (const EvalError& e) {
    Trace t;
    t.columns = prog.variables();
    t.init_values = inputs;
    t.end = TraceEnd::Error;
    t.error = e.what();
    return t;
  }
  return detail::run_from(prog, std::move(env), {}, max_iters);
}

/// Runs the loop from an arbitrary state (used to unroll counterexamples).
inline Trace execute_from_state(const LoopProgram& prog, const Valuation& state, std::size_t max_iters) {
  Valuation env;
  for (const auto& v : prog.variables()) env[v] = lookup(state, v);
  return detail::run_from(prog, std::move(env), {}, max_iters);
}

/// True when each row follows from the previous one by one body execution.
inline bool replays(const LoopProgram& prog, const Trace& t) {
  for (std::size_t i = 0; i + 1 < t.rows.size(); ++i) {
    Valuation next = step(prog, t.row(i));
    for (std::size_t c = 0; c < t.columns.size(); ++c)
      if (lookup(next, t.columns[c]) != t.rows[i + 1][c]) return false;
  }
  return true;
}

/// Whether `state` is reached by the program run on the inputs it carries.
/// Only decidable this way when the body never writes an input.
inline bool reachable(const LoopProgram& prog, const Valuation& state, std::size_t max_iters) {
  auto written = prog.assigned_in_body();
  for (const auto& p : prog.params)
    if (written.count(p)) return false;
  Valuation inputs;
  for (const auto& p : prog.params) inputs[p] = lookup(state, p);
  if (!eval_bool(*prog.pre, inputs)) return false;
  Trace t = execute_trace(prog, inputs, max_iters);
  auto vars = prog.variables();
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    bool same = true;
    for (std::size_t c = 0; c < vars.size() && same; ++c) same = t.rows[i][c] == lookup(state, vars[c]);
    if (same) return true;
  }
  return false;
}

// ---------------------------------------------------------------------------
// Input enumeration

/// Seeded Fisher-Yates with an explicit modulus so orders are identical
/// across standard libraries.
template <typename T>
void stable_shuffle(std::vector<T>& v, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng() % i]);
}

/// All input tuples in the box [lo, hi]^params that satisfy the
/// precondition, reduced to a seeded subset of `budget` when larger.
inline std::vector<Valuation> enumerate_inputs(const LoopProgram& prog, std::size_t budget = 25, int lo = -20,
                                               int hi = 20, std::uint64_t seed = 0) {
  std::vector<Valuation> found;
  const std::size_t k = prog.params.size();
  std::vector<int> cur(k, lo);
  for (;;) {
    Valuation v;
    for (std::size_t i = 0; i < k; ++i) v[prog.params[i]] = cur[i];
    bool ok = false;
    try {
      ok = eval_bool(*prog.pre, v);
    } catch (const EvalError&) {
    }
    if (ok) found.push_back(std::move(v));
    std::size_t i = 0;
    while (i < k && cur[i] == hi) cur[i++] = lo;
    if (i == k) break;
    ++cur[i];
  }
  if (found.size() > budget) {
    stable_shuffle(found, seed);
    found.resize(budget);
  }
  return found;
}

// ---------------------------------------------------------------------------
// Fractional sampling

inline std::string frozen_name(const std::string& v) { return v + "_0"; }

/// Variables that appear in a conditional-expression predicate or as an
/// external-function argument anywhere in the program.
inline std::set<std::string> predicate_vars(const LoopProgram& prog) {
  std::set<std::string> out;
  std::function<void(const Expr&)> walk = [&](const Expr& e) {
    std::visit(
        [&](const auto& n) {
          using T = std::decay_t<decltype(n)>;
          if constexpr (std::is_same_v<T, Unary>) {
            walk(*n.arg);
          } else if constexpr (std::is_same_v<T, Binary>) {
            walk(*n.lhs);
            walk(*n.rhs);
          } else if constexpr (std::is_same_v<T, Call>) {
            for (const auto& a : n.args) collect_vars(*a, out);
          } else if constexpr (std::is_same_v<T, Conditional>) {
            collect_vars(*n.cond, out);
            walk(*n.then_branch);
            walk(*n.else_branch);
          }
        },
        e.node);
  };
  walk(*prog.guard);
  for (const auto& a : prog.inits) walk(*a.value);
  for (const auto& a : prog.body) walk(*a.value);
  return out;
}

/// Variables eligible for fractional relaxation in the full pipeline: they
/// are initialized before the loop from inputs the body never writes (so the
/// frozen column can be instantiated for verification) and avoid predicates.
inline std::vector<std::string> relaxable_variables(const LoopProgram& prog) {
  auto banned = predicate_vars(prog);
  auto written = prog.assigned_in_body();
  std::vector<std::string> out;
  std::set<std::string> seen;
  for (const auto& a : prog.inits) {
    if (seen.count(a.target) || banned.count(a.target) || prog.is_param(a.target)) continue;
    seen.insert(a.target);
    bool ok = true;
    for (const auto& v : vars_of(*a.value))
      if (!prog.is_param(v) || written.count(v)) ok = false;
    // a later re-initialization would make the first expression stale
    int defs = 0;
    for (const auto& b : prog.inits) defs += b.target == a.target;
    if (ok && defs == 1) out.push_back(a.target);
  }
  return out;
}

using Interval = std::pair<Rational, Rational>;

inline std::vector<Rational> grid_points(const Interval& range, const Rational& step) {
  if (step <= 0) throw EvalError("grid step must be positive");
  std::vector<Rational> pts;
  for (Rational x = range.first; x <= range.second; x += step) pts.push_back(x);
  return pts;
}

/// One trace per grid point of initial values for `relaxed`. Each row also
/// carries the frozen starting values as `<v>_0` columns.
inline std::vector<Trace> fractional_runs(const LoopProgram& prog, const Valuation& params,
                                          const std::vector<std::string>& relaxed, const Rational& grid_step,
                                          const std::map<std::string, Interval>& ranges,
                                          std::size_t max_iters = 50) {
  auto banned = predicate_vars(prog);
  auto vars = prog.variables();
  for (const auto& r : relaxed) {
    if (std::find(vars.begin(), vars.end(), r) == vars.end())
      throw EvalError("cannot relax unknown variable '" + r + "'");
    if (banned.count(r))
      throw EvalError("cannot relax '" + r + "': it appears in a predicate or external function call");
    if (!ranges.count(r)) throw EvalError("no sampling range for '" + r + "'");
  }
  Valuation inputs;
  for (const auto& p : prog.params) inputs[p] = lookup(params, p);
  Valuation base = run_inits(prog, inputs);

  std::vector<std::vector<Rational>> axes;
  for (const auto& r : relaxed) axes.push_back(grid_points(ranges.at(r), grid_step));
  std::vector<Trace> out;
  std::vector<std::size_t> idx(relaxed.size(), 0);
  for (const auto& a : axes)
    if (a.empty()) return out;
  for (;;) {
    Valuation env = base;
    Valuation frozen;
    for (std::size_t i = 0; i < relaxed.size(); ++i) {
      env[relaxed[i]] = axes[i][idx[i]];
      frozen[frozen_name(relaxed[i])] = axes[i][idx[i]];
    }
    Trace t = detail::run_from(prog, std::move(env), frozen, max_iters);
    t.fractional = true;
    out.push_back(std::move(t));
    std::size_t i = 0;
    while (i < idx.size() && idx[i] + 1 == axes[i].size()) idx[i++] = 0;
    if (i == idx.size()) break;
    ++idx[i];
  }
  return out;
}

// ---------------------------------------------------------------------------
// CSV

inline std::string to_csv(const std::vector<std::string>& header, const std::vector<std::vector<Rational>>& rows) {
  std::ostringstream os;
  for (std::size_t i = 0; i < header.size(); ++i) os << (i ? "," : "") << header[i];
  os << '\n';
  for (const auto& r : rows) {
    for (std::size_t i = 0; i < r.size(); ++i) os << (i ? "," : "") << to_string(r[i]);
    os << '\n';
  }
  return os.str();
}

inline std::string trace_to_csv(const Trace& t) { return to_csv(t.columns, t.rows); }

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<Rational>> rows;
};

inline CsvTable parse_csv(std::string_view text) {
  CsvTable out;
  std::istringstream is{std::string(text)};
  std::string line;
  int lineno = 0;
  auto split = [](const std::string& s) {
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream ls(s);
    while (std::getline(ls, cell, ',')) {
      while (!cell.empty() && std::isspace(static_cast<unsigned char>(cell.back()))) cell.pop_back();
      while (!cell.empty() && std::isspace(static_cast<unsigned char>(cell.front()))) cell.erase(cell.begin());
      cells.push_back(cell);
    }
    return cells;
  };
  while (std::getline(is, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    auto cells = split(line);
    if (out.header.empty()) {
      out.header = cells;
      continue;
    }
    if (cells.size() != out.header.size())
      throw ParseError("expected " + std::to_string(out.header.size()) + " fields", lineno, 1);
    std::vector<Rational> row;
    for (const auto& c : cells) {
      try {
        row.push_back(parse_rational(c));
      } catch (const std::invalid_argument& e) {
        throw ParseError(e.what(), lineno, 1);
      }
    }
    out.rows.push_back(std::move(row));
  }
  if (out.header.empty()) throw ParseError("empty CSV", 1, 1);
  return out;
}

}  // namespace nlinv::dsl
