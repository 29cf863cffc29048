#pragma once

// Inference pipeline: sample traces, learn candidate atoms with gated CLN
// models, and refine the candidate pool against the solver until an
// inductive invariant remains.

#include "nlinv/config.hpp"
#include "nlinv/extract.hpp"
#include "nlinv/features.hpp"
#include "nlinv/formula.hpp"
#include "nlinv/gcln.hpp"
#include "nlinv/interpreter.hpp"
#include "nlinv/solver.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <chrono>
#include <functional>
#include <future>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <thread>
#include <vector>

namespace nlinv::cegis {

using json = nlohmann::json;
using dsl::LoopProgram;
using dsl::Valuation;

// ---------------------------------------------------------------------------
// Audit log

/// One JSON record per pipeline stage, kept in memory and optionally
/// streamed as JSON Lines.
class Audit {
 public:
  explicit Audit(std::ostream* sink = nullptr) : sink_(sink) {}

  void record(const std::string& stage, std::size_t round, json data) {
    data["stage"] = stage;
    data["round"] = round;
    if (sink_) *sink_ << data.dump() << '\n' << std::flush;
    records_.push_back(std::move(data));
  }

  const std::vector<json>& records() const { return records_; }

  std::vector<json> stage(const std::string& name) const {
    std::vector<json> out;
    for (const auto& r : records_)
      if (r["stage"] == name) out.push_back(r);
    return out;
  }

 private:
  std::ostream* sink_;
  std::vector<json> records_;
};

inline json valuation_json(const Valuation& v) {
  json j = json::object();
  for (const auto& [k, x] : v) j[k] = to_string(x);
  return j;
}

inline std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// ---------------------------------------------------------------------------
// Samples

/// Integer states observed so far, deduplicated over the program variables.
struct Samples {
  std::vector<std::string> vars;
  std::vector<dsl::Trace> traces;
  std::vector<Valuation> states;
  std::set<std::vector<Rational>> seen;

  /// Adds the trace; returns how many states were new.
  std::size_t add(const dsl::Trace& t) {
    std::size_t fresh = 0;
    for (std::size_t i = 0; i < t.size(); ++i) {
      Valuation s = t.row(i);
      std::vector<Rational> key;
      for (const auto& v : vars) key.push_back(dsl::lookup(s, v));
      if (seen.insert(key).second) {
        states.push_back(std::move(s));
        ++fresh;
      }
    }
    if (t.size() > 0) traces.push_back(t);
    return fresh;
  }
};

inline int degree_for(const LoopProgram& prog, const RunConfig& cfg) {
  if (cfg.max_deg > 0) return cfg.max_deg;
  return prog.degree_hint > 0 ? prog.degree_hint : 2;
}

inline Samples initial_samples(const LoopProgram& prog, const RunConfig& cfg, std::vector<Valuation>* inputs_out = nullptr) {
  Samples s;
  s.vars = prog.variables();
  auto inputs = dsl::enumerate_inputs(prog, cfg.inputs, cfg.input_lo, cfg.input_hi, cfg.seed);
  for (const auto& in : inputs) s.add(dsl::execute_trace(prog, in, cfg.max_iters));
  if (inputs_out) *inputs_out = std::move(inputs);
  return s;
}

/// Reachable states from a wider input range. They never reach the learner;
/// a candidate false on any of them cannot be an invariant.
inline std::vector<Valuation> holdout_states(const LoopProgram& prog, const RunConfig& cfg) {
  std::vector<Valuation> out;
  if (cfg.holdout_scale <= 1) return out;
  const int k = cfg.holdout_scale;
  auto inputs = dsl::enumerate_inputs(prog, cfg.inputs, cfg.input_lo * k, cfg.input_hi * k, mix(cfg.seed, 0x401d));
  for (const auto& in : inputs) {
    auto t = dsl::execute_trace(prog, in, cfg.max_iters * static_cast<std::size_t>(k));
    for (std::size_t i = 0; i < t.size(); ++i) out.push_back(t.row(i));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Retry ladder

struct Rung {
  double dropout = 0.0;
  std::optional<Rational> frac_step;

  json to_json() const {
    return {{"dropout", dropout}, {"frac_step", frac_step ? json(to_string(*frac_step)) : json(nullptr)}};
  }
};

/// Integer data at every dropout rate, then fractional data at each grid
/// step. Without fractional sampling the dropout rates repeat.
inline std::vector<Rung> retry_ladder(const RunConfig& cfg) {
  std::vector<Rung> out;
  if (!cfg.fractional || cfg.frac_steps.empty()) {
    for (std::size_t i = 0; i < cfg.attempts; ++i) out.push_back({cfg.dropout[i % cfg.dropout.size()], {}});
    return out;
  }
  for (double p : cfg.dropout) out.push_back({p, {}});
  for (const auto& s : cfg.frac_steps)
    for (double p : cfg.dropout) out.push_back({p, s});
  if (out.size() > cfg.attempts) out.resize(cfg.attempts);
  return out;
}

// ---------------------------------------------------------------------------
// Candidate learning

/// What the learner sees: variable names, the program when there is one
/// (needed for fractional sampling) and the integer samples.
struct LearningProblem {
  const LoopProgram* program = nullptr;
  std::vector<std::string> vars;
  std::vector<std::string> params;
  std::vector<dsl::ExternalFn> externals;
  int max_deg = 2;
  std::vector<Valuation> frac_inputs;  // parameter values for fractional runs
};

struct Learned {
  std::vector<Atom> equalities;
  std::vector<Atom> bounds;
  std::vector<FormulaPtr> clauses;        // disjunctive clauses from extraction
  std::vector<std::string> active_vars;   // after elimination
};

namespace detail {

using nlinv::detail::Poly;

/// Replaces every frozen `<v>_0` factor by the polynomial v is initialized to.
inline Atom instantiate(const Atom& a, const std::map<std::string, Poly>& init_of) {
  Atom out;
  out.rel = a.rel;
  out.constant = a.constant;
  for (const auto& [t, c] : a.coeffs) {
    if (t.is_external()) {
      out.add(t, c);
      continue;
    }
    Poly p{{Term::one(), 1}};
    std::vector<std::pair<std::string, int>> rest;
    for (const auto& [v, e] : t.factors) {
      auto it = init_of.find(v);
      if (it == init_of.end()) {
        rest.push_back({v, e});
        continue;
      }
      for (int i = 0; i < e; ++i) p = nlinv::detail::poly_mul(p, it->second);
    }
    Term r = Term::monomial(rest);
    for (const auto& [pt, pc] : p) out.add(pt * r, c * pc);
  }
  return canonical(out);
}

inline bool mentions(const Atom& a, const std::string& v) {
  for (const auto& [t, c] : a.coeffs) {
    for (const auto& f : t.factors)
      if (f.first == v) return true;
    for (const auto& x : t.args)
      if (x == v) return true;
  }
  return false;
}

/// A variable the equality defines: it occurs only as the plain linear
/// term. Non-parameters first, later variables first.
inline std::optional<std::string> eliminable(const Atom& a, const std::vector<std::string>& active,
                                             const std::vector<std::string>& params) {
  if (a.rel != Rel::Eq) return std::nullopt;
  std::optional<std::string> best;
  bool best_param = true;
  for (auto it = active.rbegin(); it != active.rend(); ++it) {
    const std::string& v = *it;
    if (!a.coeffs.count(Term::var(v))) continue;
    bool only_linear = true;
    for (const auto& [t, c] : a.coeffs)
      if (!(t == Term::var(v))) {
        for (const auto& f : t.factors) only_linear = only_linear && f.first != v;
        for (const auto& x : t.args) only_linear = only_linear && x != v;
      }
    if (!only_linear) continue;
    bool is_param = std::find(params.begin(), params.end(), v) != params.end();
    if (!best || (best_param && !is_param)) {
      best = v;
      best_param = is_param;
    }
  }
  return best;
}

inline bool holds_everywhere(const Atom& a, const std::vector<Valuation>& states) {
  for (const auto& s : states) {
    try {
      if (!a.holds(s)) return false;
    } catch (const EvalError&) {
      return false;
    }
  }
  return true;
}

inline RationalMatrix subsample(const RationalMatrix& raw, std::size_t cap, std::uint64_t seed) {
  if (raw.size() <= cap) return raw;
  std::vector<std::size_t> idx(raw.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  dsl::stable_shuffle(idx, seed);
  idx.resize(cap);
  std::sort(idx.begin(), idx.end());
  RationalMatrix out;
  for (auto i : idx) out.push_back(raw[i]);
  return out;
}

inline void split_conjuncts(const FormulaPtr& f, std::vector<FormulaPtr>& out) {
  if (f->kind == Formula::Kind::And) {
    for (const auto& c : f->children) split_conjuncts(c, out);
  } else {
    out.push_back(f);
  }
}

inline bool has_frozen(const Formula& f, const std::map<std::string, Poly>& init_of) {
  std::vector<Atom> atoms;
  collect_atoms(f, atoms);
  for (const auto& a : atoms)
    for (const auto& [v, p] : init_of)
      if (mentions(a, v)) return true;
  return false;
}

/// A clause with a disjunct that is already a candidate adds nothing.
inline bool subsumed(const Formula& clause, const std::vector<Atom>& a, const std::vector<Atom>& b) {
  for (const auto& c : clause.children)
    if (c->kind == Formula::Kind::Atom) {
      Atom x = canonical(c->atom);
      if (std::find(a.begin(), a.end(), x) != a.end() || std::find(b.begin(), b.end(), x) != b.end()) return true;
    }
  return false;
}

inline void push_unique(std::vector<Atom>& v, const Atom& a) {
  if (std::find(v.begin(), v.end(), a) == v.end()) v.push_back(a);
}

}  // namespace detail

/// Fractional-sampling rows, each carrying frozen columns for `relaxed`.
inline std::vector<Valuation> fractional_states(const LearningProblem& pb, const std::vector<std::string>& relaxed,
                                                const Rational& step, const RunConfig& cfg) {
  std::vector<Valuation> out;
  if (!pb.program || relaxed.empty()) return out;
  std::map<std::string, dsl::Interval> ranges;
  for (const auto& v : relaxed) ranges[v] = {cfg.frac_lo, cfg.frac_hi};
  for (const auto& in : pb.frac_inputs) {
    std::vector<dsl::Trace> runs;
    try {
      runs = dsl::fractional_runs(*pb.program, in, relaxed, step, ranges, cfg.frac_max_iters);
    } catch (const EvalError&) {
      continue;
    }
    for (const auto& t : runs)
      for (std::size_t i = 0; i < t.size(); ++i) out.push_back(t.row(i));
  }
  return out;
}

/// Equality candidates over a growing degree ladder. A variable defined by
/// an accepted equality leaves the basis of later degrees.
inline void learn_equalities(const LearningProblem& pb, const Samples& data, const RunConfig& cfg, const Rung& rung,
                             std::uint64_t seed, Audit& audit, std::size_t round, Learned& out) {
  std::vector<std::string> active = pb.vars;
  std::map<std::string, nlinv::detail::Poly> init_all;
  std::vector<std::string> relaxable;
  if (pb.program && rung.frac_step) {
    relaxable = dsl::relaxable_variables(*pb.program);
    for (const auto& a : pb.program->inits)
      if (std::find(relaxable.begin(), relaxable.end(), a.target) != relaxable.end())
        init_all[dsl::frozen_name(a.target)] = nlinv::detail::to_poly(*a.value);
  }

  for (int d = 1; d <= pb.max_deg; ++d) {
    std::vector<std::string> relaxed;
    std::map<std::string, nlinv::detail::Poly> init_of;
    for (const auto& v : relaxable)
      if (std::find(active.begin(), active.end(), v) != active.end()) {
        relaxed.push_back(v);
        init_of[dsl::frozen_name(v)] = init_all.at(dsl::frozen_name(v));
      }

    std::vector<Term> basis = enumerate_terms(active, d, pb.externals);
    json growth = nullptr;
    if (cfg.growth_filter && pb.program) {
      auto g = growth_rate_filter(data.traces, basis, cfg.growth_margin);
      growth = json::array();
      for (const auto& t : g.removed) growth.push_back(t.name());
      basis = g.kept;
    }
    std::vector<std::string> frozen;
    for (const auto& v : relaxed) frozen.push_back(dsl::frozen_name(v));
    if (!frozen.empty()) {
      auto fb = enumerate_terms(frozen, d);
      basis.insert(basis.end(), fb.begin() + 1, fb.end());
    }

    // integer states carry their own starting values in the frozen columns
    std::vector<Valuation> rows;
    for (const auto& s : data.states) {
      Valuation r = s;
      bool ok = true;
      for (const auto& v : relaxed) {
        for (const auto& a : pb.program->inits)
          if (a.target == v) {
            try {
              r[dsl::frozen_name(v)] = dsl::eval_num(*a.value, s);
            } catch (const EvalError&) {
              ok = false;
            }
          }
      }
      if (ok) rows.push_back(std::move(r));
    }
    std::size_t int_rows = rows.size();
    if (rung.frac_step) {
      auto fr = fractional_states(pb, relaxed, *rung.frac_step, cfg);
      rows.insert(rows.end(), fr.begin(), fr.end());
    }
    RationalMatrix raw = evaluate_terms(basis, rows);
    if (raw.empty() || basis.size() < 2) continue;
    std::uint64_t s = mix(seed, static_cast<std::uint64_t>(d));
    RationalMatrix train_raw = detail::subsample(raw, cfg.max_train_rows, s);
    RealMatrix X = cfg.normalize ? normalize_rows(train_raw, cfg.norm_target) : to_real(train_raw);

    const std::size_t L = cfg.clauses * cfg.literals;
    auto model = gcln::make_model(basis.size(), cfg.clauses, cfg.literals,
                                  std::vector<gcln::Activation>(L, gcln::Activation::Equality),
                                  make_dropout_masks(basis, rung.dropout, L, s), cfg.relax, s, cfg.gates);
    for (auto& lit : model.literals) {
      lit.train_bias = false;  // the constant column carries it
      lit.b = 0.0;
    }
    model.project_weights = cfg.weight_projection;
    gcln::TrainConfig tc = cfg.train;
    tc.seed = s;
    if (!cfg.gated) {
      gcln::freeze_gates(model);
      tc.regularize_gates = false;
    }
    gcln::TrainReport rep;
    try {
      rep = gcln::train(model, X, tc);
    } catch (const TrainingError& e) {
      audit.record("train", round, {{"kind", "equality"}, {"degree", d}, {"error", e.what()}});
      continue;
    }
    json tj = rep.to_json();
    tj["kind"] = "equality";
    tj["degree"] = d;
    tj["basis"] = term_names(basis);
    tj["rows"] = X.size();
    tj["integer_rows"] = int_rows;
    tj["frac_rows"] = raw.size() - int_rows;
    tj["growth_removed"] = growth;
    tj["dropout"] = rung.dropout;
    audit.record("train", round, tj);

    std::vector<Atom> accepted;
    std::size_t raw_candidates = 0, snapped_count = 0;
    // enough evenly spread rows to pin the null space; candidates are then
    // checked against every row
    RationalMatrix sparse_rows;
    {
      std::size_t want = std::min(raw.size(), 4 * basis.size() + 16);
      for (std::size_t i = 0; i < want; ++i) sparse_rows.push_back(raw[i * raw.size() / want]);
    }
    for (const auto& lit : model.literals) {
      auto cands = extract::literal_candidates(lit, basis, cfg.rational);
      raw_candidates += cands.size();
      auto kept = extract::filter_against_data(cands, basis, raw);
      if (kept.empty() && cfg.snap) {
        auto snapped = extract::snap_to_support(lit, basis, sparse_rows, cfg.snap_tolerance);
        kept = extract::filter_against_data(snapped, basis, raw);
        snapped_count += kept.size();
      }
      for (const auto& a : kept) {
        Atom inst = init_of.empty() ? a : detail::instantiate(a, init_of);
        if (inst.degenerate() || !detail::holds_everywhere(inst, data.states)) continue;
        detail::push_unique(accepted, inst);
      }
    }
    std::vector<std::string> eliminated;
    json acc = json::array();
    for (const auto& a : accepted) {
      acc.push_back(to_string(a));
      detail::push_unique(out.equalities, a);
      bool stale = false;
      for (const auto& e : eliminated) stale = stale || detail::mentions(a, e);
      if (stale) continue;
      if (auto v = detail::eliminable(a, active, pb.params)) {
        eliminated.push_back(*v);
        active.erase(std::find(active.begin(), active.end(), *v));
      }
    }
    extract::ExtractLog log;
    std::vector<std::string> clause_text;
    FormulaPtr f = extract::extract_formula(model, basis, cfg.gate_threshold, &log, cfg.rational);
    std::vector<FormulaPtr> parts;
    detail::split_conjuncts(f, parts);
    for (const auto& c : parts) {
      if (c->kind != Formula::Kind::Or) continue;
      if (detail::has_frozen(*c, init_of) || !extract::holds_on_states(*c, data.states)) continue;
      if (detail::subsumed(*c, out.equalities, accepted)) continue;
      out.clauses.push_back(c);
      clause_text.push_back(to_string(*c));
    }

    audit.record("extract", round,
                 {{"kind", "equality"},
                  {"degree", d},
                  {"formula", to_string(*f)},
                  {"warnings", log.warnings},
                  {"candidates", raw_candidates},
                  {"snapped", snapped_count},
                  {"accepted", acc},
                  {"clauses", clause_text},
                  {"eliminated", eliminated}});
  }
  out.active_vars = active;
}

/// Bounds from 1x1 inequality models over small monomial subsets, trained
/// on raw integer states. Loose bounds are pruned by mean activation and
/// the offset of each survivor is snapped to the data.
namespace detail {

/// A bound in one variable of degree at most two that every integer
/// satisfies, such as (k - 5)^2 >= 0. These say nothing about the loop.
inline bool integer_tautology(const Atom& a) {
  if (a.rel != Rel::Ge) return false;
  std::string v;
  Rational c1 = 0, c2 = 0;
  for (const auto& [t, c] : a.coeffs) {
    if (t.is_external() || t.factors.size() != 1) return false;
    const auto& [name, e] = t.factors.front();
    if (!v.empty() && name != v) return false;
    v = name;
    if (e == 1) c1 = c;
    else if (e == 2) c2 = c;
    else return false;
  }
  if (v.empty() || c2 <= 0) return false;
  Integer x = floor_int(-c1 / (2 * c2));
  for (Integer k : {x, Integer(x + 1)}) {
    Rational q(k);
    if (c2 * q * q + c1 * q + a.constant < 0) return false;
  }
  return true;
}

}  // namespace detail

inline void learn_bounds(const LearningProblem& pb, const Samples& data, const RunConfig& cfg, std::uint64_t seed,
                         Audit& audit, std::size_t round, Learned& out) {
  if (!cfg.learn_bounds || data.states.empty()) return;
  const auto& vars = out.active_vars.empty() ? pb.vars : out.active_vars;
  auto subsets = bound_term_subsets(vars, static_cast<int>(cfg.bound_terms), cfg.bound_degree);
  gcln::TrainConfig tc;
  tc.lr = cfg.bound_lr;
  tc.max_epochs = cfg.bound_epochs;
  tc.regularize_gates = false;
  tc.sigma_start = 0.0;
  std::size_t trained = 0, pruned = 0;
  json kept = json::array();
  for (std::size_t si = 0; si < subsets.size(); ++si) {
    const auto& basis = subsets[si];
    RationalMatrix raw = evaluate_terms(basis, data.states);
    if (raw.empty()) continue;
    RealMatrix X = to_real(raw);
    // one random start per direction, plus the four diagonals for a pair of
    // linear terms so that difference bounds do not hinge on the seed
    std::vector<std::pair<gcln::Activation, std::vector<double>>> starts{{gcln::Activation::GreaterEq, {}},
                                                                         {gcln::Activation::LessEq, {}}};
    if (basis.size() == 2 && basis[0].degree() == 1 && basis[1].degree() == 1)
      for (double a : {1.0, -1.0})
        for (double b : {1.0, -1.0}) starts.push_back({gcln::Activation::GreaterEq, {a, b}});
    for (std::size_t st = 0; st < starts.size(); ++st) {
      const auto& [kind, w0] = starts[st];
      std::uint64_t s = mix(mix(seed, si), st < 2 ? static_cast<std::uint64_t>(kind) : 0x5d00 + st);
      DropoutMask all;
      all.keep.assign(basis.size(), true);
      auto model = gcln::make_model(basis.size(), 1, 1, {kind}, {all}, cfg.relax, s);
      gcln::freeze_gates(model);
      auto& lit = model.literals[0];
      if (!w0.empty()) lit.w = w0;
      auto edge = [&](const gcln::Literal& l) {
        double lo = 1e300, hi = -1e300;
        for (const auto& r : X) {
          double v = 0;
          for (std::size_t k = 0; k < r.size(); ++k) v += l.w[k] * r[k];
          lo = std::min(lo, v);
          hi = std::max(hi, v);
        }
        return kind == gcln::Activation::GreaterEq ? -lo : -hi;
      };
      lit.b = edge(lit);
      tc.seed = s;
      try {
        gcln::train(model, X, tc);
      } catch (const TrainingError&) {
        continue;
      }
      ++trained;
      if (gcln::mean_activation(model, 0, X) < cfg.prune_threshold) {
        ++pruned;
        continue;
      }
      for (const auto& c : extract::rationalize(lit.w, lit.b, cfg.rational)) {
        // snap the offset to the tightest value the data allows
        std::optional<Rational> lo, hi;
        for (const auto& r : raw) {
          Rational v = 0;
          for (std::size_t k = 0; k < r.size(); ++k)
            if (c.w[k] != 0) v += Rational(c.w[k]) * r[k];
          if (!lo || v < *lo) lo = v;
          if (!hi || v > *hi) hi = v;
        }
        Atom a;
        a.rel = kind == gcln::Activation::GreaterEq ? Rel::Ge : Rel::Le;
        for (std::size_t k = 0; k < basis.size(); ++k)
          if (c.w[k] != 0) a.add(basis[k], Rational(c.w[k]));
        a.constant = kind == gcln::Activation::GreaterEq ? -*lo : -*hi;
        a = canonical(flip_to_ge(canonical(a)));
        if (a.degenerate()) continue;
        // the coarsest rounding that keeps the support wins
        if (!detail::integer_tautology(a) && std::find(out.bounds.begin(), out.bounds.end(), a) == out.bounds.end()) {
          out.bounds.push_back(a);
          kept.push_back(to_string(a));
        }
        break;
      }
    }
  }
  audit.record("extract", round,
               {{"kind", "bound"}, {"subsets", subsets.size()}, {"trained", trained}, {"pruned", pruned},
                {"accepted", kept}});
}

inline Learned learn_candidates(const LearningProblem& pb, const Samples& data, const RunConfig& cfg,
                                const Rung& rung, std::uint64_t seed, Audit& audit, std::size_t round) {
  Learned out;
  learn_equalities(pb, data, cfg, rung, seed, audit, round, out);
  learn_bounds(pb, data, cfg, mix(seed, 0xb0), audit, round, out);
  return out;
}

inline LearningProblem problem_for(const LoopProgram& prog, const RunConfig& cfg,
                                   const std::vector<Valuation>& inputs) {
  LearningProblem pb;
  pb.program = &prog;
  pb.vars = prog.variables();
  pb.params = prog.params;
  pb.externals = prog.externals;
  pb.max_deg = degree_for(prog, cfg);
  // fractional runs use the smallest inputs so parameter powers stay small
  std::vector<Valuation> sorted = inputs;
  auto size = [&](const Valuation& v) {
    Rational m = 0;
    for (const auto& p : prog.params) m = std::max(m, Rational(abs(dsl::lookup(v, p))));
    return m;
  };
  std::stable_sort(sorted.begin(), sorted.end(), [&](const auto& a, const auto& b) { return size(a) < size(b); });
  if (sorted.size() > 3) sorted.resize(3);
  pb.frac_inputs = sorted;
  return pb;
}

// ---------------------------------------------------------------------------
// Candidate pool and counterexample loop

struct Candidate {
  FormulaPtr formula;
  std::string text;
  std::string origin;  // "equality", "bound" or "clause"
};

class Pool {
 public:
  bool add(FormulaPtr f, const std::string& origin) {
    std::string t = to_string(*f);
    for (const auto& c : items_)
      if (c.text == t) return false;
    items_.push_back({std::move(f), std::move(t), origin});
    return true;
  }

  /// Drops candidates that fail on some state; returns their text.
  std::vector<std::string> filter(const std::vector<Valuation>& states) {
    std::vector<std::string> gone;
    std::erase_if(items_, [&](const Candidate& c) {
      bool bad = !extract::holds_on_states(*c.formula, states);
      if (bad) gone.push_back(c.text);
      return bad;
    });
    return gone;
  }

  const std::vector<Candidate>& items() const { return items_; }
  std::size_t size() const { return items_.size(); }

 private:
  std::vector<Candidate> items_;
};

inline FormulaPtr conjunction(const std::vector<Candidate>& cs) {
  if (cs.empty()) return f_true();
  if (cs.size() == 1) return cs.front().formula;
  std::vector<FormulaPtr> fs;
  for (const auto& c : cs) fs.push_back(c.formula);
  return f_and(std::move(fs));
}

struct CounterexampleRecord {
  std::size_t round = 0;
  checker::Condition condition = checker::Condition::Initiation;
  Valuation state;
  bool added_to_data = false;

  json to_json() const {
    return {{"round", round},
            {"condition", checker::condition_name(condition)},
            {"state", valuation_json(state)},
            {"added_to_data", added_to_data}};
  }
};

struct HoudiniOutcome {
  bool success = false;
  std::string verdict = "unknown";
  std::vector<Candidate> survivors;
  std::string reason;
  std::size_t solver_calls = 0;
};

namespace detail {

inline checker::SolverConfig quick_solver(const RunConfig& cfg) {
  auto q = cfg.solver;
  q.timeout_seconds = std::min(q.timeout_seconds, cfg.houdini_timeout);
  return q;
}

/// One condition checked separately for every candidate, with `premise[i]`
/// as the invariant assumed for candidate i. Runs a few solver processes at
/// a time.
inline std::vector<checker::ConditionResult> per_candidate(const LoopProgram& prog,
                                                           const std::vector<FormulaPtr>& premise,
                                                           const std::vector<Candidate>& cs, checker::Condition c,
                                                           const checker::SolverConfig& scfg) {
  std::vector<checker::ConditionResult> out(cs.size());
  std::size_t width = std::max<std::size_t>(1, std::min<std::size_t>(8, std::thread::hardware_concurrency()));
  for (std::size_t lo = 0; lo < cs.size(); lo += width) {
    std::vector<std::future<checker::ConditionResult>> fs;
    for (std::size_t i = lo; i < std::min(cs.size(), lo + width); ++i) {
      fs.push_back(std::async(std::launch::async, [&, i] {
        checker::VerificationProblem vp{&prog, premise[i], cs[i].formula};
        return checker::check_one(vp, c, scfg);
      }));
    }
    for (std::size_t i = lo; i < std::min(cs.size(), lo + width); ++i) out[i] = fs[i - lo].get();
  }
  return out;
}

/// Texts of candidates that are preserved by the loop on their own. Such a
/// candidate stays preserved under any larger conjunction.
using InductiveCache = std::set<std::string>;

inline std::vector<checker::ConditionResult> per_candidate(const LoopProgram& prog, const FormulaPtr& inv,
                                                           const std::vector<Candidate>& cs, checker::Condition c,
                                                           const checker::SolverConfig& scfg,
                                                           std::size_t& calls, InductiveCache* cache = nullptr) {
  if (c != checker::Condition::Consecution || !cache) {
    calls += cs.size();
    return per_candidate(prog, std::vector<FormulaPtr>(cs.size(), inv), cs, c, scfg);
  }
  std::vector<Candidate> fresh;
  std::vector<FormulaPtr> alone;
  for (const auto& x : cs)
    if (!cache->count(x.text)) fresh.push_back(x), alone.push_back(x.formula);
  auto own = per_candidate(prog, alone, fresh, c, scfg);
  calls += fresh.size();
  for (std::size_t i = 0; i < fresh.size(); ++i)
    if (own[i].status == checker::Status::Valid) cache->insert(fresh[i].text);
  std::vector<checker::ConditionResult> out(cs.size());
  std::vector<Candidate> rest;
  std::vector<std::size_t> where;
  for (std::size_t i = 0; i < cs.size(); ++i) {
    out[i].condition = c;
    if (cache->count(cs[i].text)) out[i].status = checker::Status::Valid;
    else rest.push_back(cs[i]), where.push_back(i);
  }
  auto more = per_candidate(prog, std::vector<FormulaPtr>(rest.size(), inv), rest, c, scfg);
  calls += rest.size();
  for (std::size_t k = 0; k < rest.size(); ++k) out[where[k]] = more[k];
  return out;
}

// gcd-dependent unknowns count as proven, the same way a full verification
// reports valid-modulo-gcd
inline bool accepted(const checker::ConditionResult& r) {
  return r.status == checker::Status::Valid || (r.status == checker::Status::Unknown && r.gcd_dependent);
}

}  // namespace detail

/// Repeatedly checks the conjunction of `active` and drops candidates that
/// the counterexamples refute. Reachable counterexample states go into
/// `data` and out of `pool`. When the solver cannot decide the whole
/// conjunction, each candidate is checked on its own and the undecided ones
/// are dropped too.
inline HoudiniOutcome houdini(const LoopProgram& prog, std::vector<Candidate> active, Pool& pool, Samples& data,
                              const RunConfig& cfg, Audit& audit, std::size_t round,
                              std::vector<CounterexampleRecord>& cexs,
                              detail::InductiveCache* cache = nullptr) {
  using checker::Condition;
  detail::InductiveCache local_cache;
  if (!cache) cache = &local_cache;
  using checker::Status;
  HoudiniOutcome out;
  const auto quick = detail::quick_solver(cfg);
  auto drop_false_at = [&](const Valuation& s) {
    std::vector<std::string> gone;
    std::erase_if(active, [&](const Candidate& c) {
      bool bad = true;
      try {
        bad = !eval(*c.formula, s);
      } catch (const EvalError&) {
      }
      if (bad) gone.push_back(c.text);
      return bad;
    });
    return gone;
  };
  auto learn_from = [&](const dsl::Trace& t) {
    data.add(t);
    pool.filter(data.states);
  };
  auto initiation_cex = [&](const Valuation& state, json& dropped) {
    Valuation params;
    for (const auto& p : prog.params) params[p] = dsl::lookup(state, p);
    for (auto& g : drop_false_at(dsl::run_inits(prog, params))) dropped.push_back(g);
    learn_from(dsl::execute_trace(prog, params, cfg.unroll));
    cexs.push_back({round, Condition::Initiation, params, true});
  };
  auto consecution_cex = [&](const Valuation& s, json& dropped) {
    CounterexampleRecord cr{round, Condition::Consecution, s, false};
    for (auto& g : drop_false_at(dsl::step(prog, s))) dropped.push_back(g);
    if (dsl::reachable(prog, s, cfg.max_iters)) {
      learn_from(dsl::execute_from_state(prog, s, cfg.unroll));
      cr.added_to_data = true;
    }
    cexs.push_back(cr);
  };

  for (;;) {
    FormulaPtr inv = conjunction(active);
    auto res = checker::verify({&prog, inv}, quick);
    ++out.solver_calls;
    json rec{{"invariant", to_string(*inv)}, {"pool", active.size()}, {"result", res.to_json()}};
    if (res.valid() || res.valid_modulo_gcd()) {
      audit.record("check", round, rec);
      out.success = true;
      out.verdict = res.verdict();
      out.survivors = active;
      return out;
    }
    json dropped = json::array();
    const auto& ini = res[Condition::Initiation];
    const auto& con = res[Condition::Consecution];
    bool progress = false;
    if (ini.status == Status::Counterexample) initiation_cex(ini.counterexample, dropped), progress = true;
    if (con.status == Status::Counterexample) consecution_cex(con.counterexample, dropped), progress = true;

    bool modulo_gcd = false;
    if (!progress) {
      json undecided = json::array();
      for (Condition c : {Condition::Initiation, Condition::Consecution}) {
        if (res[c].status == Status::Valid || progress) continue;
        auto parts = detail::per_candidate(prog, inv, active, c, quick, out.solver_calls, cache);
        std::vector<Candidate> keep;
        for (std::size_t i = 0; i < parts.size(); ++i) {
          const auto& r = parts[i];
          if (detail::accepted(r)) {
            modulo_gcd = modulo_gcd || r.status != Status::Valid;
            keep.push_back(active[i]);
          } else if (r.status == Status::Counterexample) {
            dropped.push_back(active[i].text);
            if (c == Condition::Initiation) initiation_cex(r.counterexample, dropped);
            else consecution_cex(r.counterexample, dropped);
          } else {
            undecided.push_back(active[i].text);
          }
        }
        if (keep.size() < active.size() || !dropped.empty()) {
          // candidates may already be gone after a counterexample replay
          std::erase_if(keep, [&](const Candidate& k) {
            return std::none_of(active.begin(), active.end(), [&](const Candidate& a) { return a.text == k.text; });
          });
          active = std::move(keep);
          progress = true;
        }
      }
      rec["undecided"] = undecided;
    }
    rec["dropped"] = dropped;
    audit.record("check", round, rec);
    if (progress) continue;

    // initiation and consecution hold candidate by candidate
    out.survivors = active;
    auto suf = res[Condition::Sufficiency];
    if (suf.status == Status::Unknown && !suf.gcd_dependent) {
      suf = checker::check_one({&prog, inv}, Condition::Sufficiency, cfg.solver);
      ++out.solver_calls;
      audit.record("check", round, {{"purpose", "sufficiency"}, {"result", suf.to_json()}});
    }
    if (detail::accepted(suf)) {
      out.success = true;
      modulo_gcd = modulo_gcd || suf.status != Status::Valid;
      for (const auto& r : res.results)
        if (r.status == Status::Unknown && r.gcd_dependent) modulo_gcd = true;
      out.verdict = modulo_gcd ? "valid-modulo-gcd" : "valid";
      return out;
    }
    if (suf.status == Status::Counterexample) {
      cexs.push_back({round, suf.condition, suf.counterexample, false});
      out.verdict = "invalid";
      out.reason = "inductive candidate is too weak for the postcondition";
    } else {
      out.verdict = "unknown";
      out.reason = "solver could not decide sufficiency: " + suf.reason;
    }
    return out;
  }
}

/// Whether the conjunction is a valid invariant, falling back to checking
/// initiation and consecution one conjunct at a time.
inline bool proves(const LoopProgram& prog, const std::vector<Candidate>& cs, const RunConfig& cfg,
                   std::size_t& calls, detail::InductiveCache* cache = nullptr) {
  using checker::Condition;
  const auto quick = detail::quick_solver(cfg);
  FormulaPtr inv = conjunction(cs);
  auto res = checker::verify({&prog, inv}, quick);
  ++calls;
  if (res.valid() || res.valid_modulo_gcd()) return true;
  if (res.has_counterexample()) return false;
  for (Condition c : {Condition::Initiation, Condition::Consecution}) {
    if (detail::accepted(res[c])) continue;
    auto parts = detail::per_candidate(prog, inv, cs, c, quick, calls, cache);
    for (const auto& r : parts)
      if (!detail::accepted(r)) return false;
  }
  auto suf = res[Condition::Sufficiency];
  if (!detail::accepted(suf)) {
    if (suf.status != checker::Status::Unknown) return false;
    suf = checker::check_one({&prog, inv}, Condition::Sufficiency, cfg.solver);
    ++calls;
  }
  return detail::accepted(suf);
}

/// Greedily drops conjuncts while the invariant stays valid: all clauses at
/// once, then halving groups of clauses, bounds and equalities.
inline std::vector<Candidate> minimize(const LoopProgram& prog, std::vector<Candidate> inv, const RunConfig& cfg,
                                       Audit& audit, std::size_t round, std::size_t& calls,
                                       detail::InductiveCache* cache = nullptr) {
  auto still_valid = [&](const std::vector<Candidate>& cs) {
    bool ok = proves(prog, cs, cfg, calls, cache);
    audit.record("check", round,
                 {{"purpose", "minimize"}, {"invariant", to_string(*conjunction(cs))}, {"valid", ok}});
    return ok;
  };
  auto without = [&](const std::vector<Candidate>& cs, const std::function<bool(const Candidate&)>& drop) {
    std::vector<Candidate> out;
    for (const auto& c : cs)
      if (!drop(c)) out.push_back(c);
    return out;
  };
  auto clauses = without(inv, [](const Candidate& c) { return c.origin == "clause"; });
  if (clauses.size() < inv.size() && still_valid(clauses)) inv = clauses;
  for (const char* kind : {"clause", "bound", "equality"}) {
    // halving chunks of this kind, down to single conjuncts
    auto count = [&] {
      return static_cast<std::size_t>(std::count_if(inv.begin(), inv.end(), [&](const Candidate& c) { return c.origin == kind; }));
    };
    for (std::size_t chunk = std::max<std::size_t>(1, count() / 2);; chunk = std::max<std::size_t>(1, chunk / 2)) {
      std::vector<std::string> texts;
      for (const auto& c : inv)
        if (c.origin == kind) texts.push_back(c.text);
      for (std::size_t lo = 0; lo < texts.size(); lo += chunk) {
        std::set<std::string> drop(texts.begin() + static_cast<std::ptrdiff_t>(lo),
                                   texts.begin() + static_cast<std::ptrdiff_t>(std::min(texts.size(), lo + chunk)));
        auto trial = without(inv, [&](const Candidate& c) { return drop.count(c.text) > 0; });
        if (!trial.empty() && still_valid(trial)) inv = std::move(trial);
      }
      if (chunk == 1) break;
    }
  }
  return inv;
}

// ---------------------------------------------------------------------------
// Driver

struct AttemptReport {
  std::size_t index = 0;
  Rung rung;
  std::size_t equalities = 0;
  std::size_t bounds = 0;
  std::size_t clauses = 0;
  std::size_t pool = 0;
  bool success = false;
  std::string reason;
  double seconds = 0;

  json to_json() const {
    return {{"attempt", index},       {"rung", rung.to_json()}, {"equalities", equalities},
            {"bounds", bounds},       {"clauses", clauses},     {"pool", pool},
            {"success", success},     {"reason", reason},       {"seconds", seconds}};
  }
};

struct InferResult {
  std::string program;
  bool success = false;
  std::string verdict = "unknown";
  FormulaPtr invariant;
  FormulaPtr best_candidate;
  std::string failure_reason;
  std::vector<AttemptReport> attempts;
  std::vector<CounterexampleRecord> counterexamples;
  std::size_t solver_calls = 0;
  std::size_t samples = 0;
  double seconds = 0;
  json config;

  json to_json() const {
    json j{{"program", program},
           {"success", success},
           {"verdict", verdict},
           {"invariant", invariant ? json(to_string(*invariant)) : json(nullptr)},
           {"solver_calls", solver_calls},
           {"samples", samples},
           {"seconds", seconds},
           {"config", config}};
    j["attempts"] = json::array();
    for (const auto& a : attempts) j["attempts"].push_back(a.to_json());
    if (!success) {
      j["failure"] = {{"reason", failure_reason},
                      {"best_candidate", best_candidate ? json(to_string(*best_candidate)) : json(nullptr)}};
    }
    j["counterexamples"] = json::array();
    for (const auto& c : counterexamples) j["counterexamples"].push_back(c.to_json());
    return j;
  }
};

/// The full loop: sample, learn, verify, and climb the retry ladder until a
/// valid invariant is found or the attempts run out.
inline InferResult infer(const LoopProgram& prog, const RunConfig& cfg, Audit* audit_ptr = nullptr) {
  cfg.validate();
  checker::resolve_solver(cfg.solver.path);
  Audit local;
  Audit& audit = audit_ptr ? *audit_ptr : local;
  auto t0 = std::chrono::steady_clock::now();
  auto elapsed = [&] { return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count(); };

  InferResult res;
  res.program = prog.name;
  res.config = cfg.to_json();

  std::vector<Valuation> inputs;
  Samples data = initial_samples(prog, cfg, &inputs);
  auto holdout = holdout_states(prog, cfg);
  audit.record("sample", 0,
               {{"inputs", inputs.size()}, {"traces", data.traces.size()}, {"states", data.states.size()},
                {"holdout", holdout.size()}, {"max_deg", degree_for(prog, cfg)}});
  LearningProblem pb = problem_for(prog, cfg, inputs);

  Pool pool;
  detail::InductiveCache inductive;
  auto ladder = retry_ladder(cfg);
  for (std::size_t i = 0; i < ladder.size(); ++i) {
    auto ta = std::chrono::steady_clock::now();
    AttemptReport ar;
    ar.index = i;
    ar.rung = ladder[i];
    if (i > 0)
      audit.record("retry", i, {{"rung", ladder[i].to_json()}, {"previous_reason", res.attempts.back().reason}});
    Learned L = learn_candidates(pb, data, cfg, ladder[i], mix(cfg.seed, i), audit, i);
    for (const auto& a : L.equalities) ar.equalities += pool.add(f_atom(a), "equality");
    for (const auto& a : L.bounds) ar.bounds += pool.add(f_atom(a), "bound");
    for (const auto& c : L.clauses) ar.clauses += pool.add(c, "clause");
    pool.filter(data.states);
    auto screened = pool.filter(holdout);
    ar.pool = pool.size();
    audit.record("screen", i, {{"pool", pool.size()}, {"dropped", screened}});

    HoudiniOutcome h = houdini(prog, pool.items(), pool, data, cfg, audit, i, res.counterexamples, &inductive);
    res.solver_calls += h.solver_calls;
    ar.success = h.success;
    ar.reason = h.reason;
    ar.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - ta).count();
    res.attempts.push_back(ar);
    res.best_candidate = conjunction(h.survivors);
    res.verdict = h.verdict;
    if (h.success) {
      res.success = true;
      if (cfg.minimize) {
        std::size_t calls = 0;
        h.survivors = minimize(prog, h.survivors, cfg, audit, i, calls, &inductive);
        res.solver_calls += calls;
        res.best_candidate = conjunction(h.survivors);
      }
      res.invariant = res.best_candidate;
      res.failure_reason.clear();
      break;
    }
    res.failure_reason = h.reason;
  }
  res.samples = data.states.size();
  res.seconds = elapsed();
  return res;
}

/// Learning only, on a program's traces or on a plain table of states.
/// Returns the conjunction of every candidate that holds on the data.
struct TraceOnlyResult {
  std::vector<Candidate> candidates;
  std::size_t samples = 0;

  FormulaPtr formula() const { return conjunction(candidates); }

  json to_json() const {
    json c = json::array();
    for (const auto& x : candidates) c.push_back({{"formula", x.text}, {"origin", x.origin}});
    return {{"candidates", c}, {"formula", to_string(*formula())}, {"samples", samples}};
  }
};

inline TraceOnlyResult learn_only(const LearningProblem& pb, Samples data, const RunConfig& cfg, Audit* audit_ptr) {
  Audit local;
  Audit& audit = audit_ptr ? *audit_ptr : local;
  audit.record("sample", 0, {{"traces", data.traces.size()}, {"states", data.states.size()}, {"max_deg", pb.max_deg}});
  Rung rung{cfg.dropout.front(), {}};
  Learned L = learn_candidates(pb, data, cfg, rung, cfg.seed, audit, 0);
  Pool pool;
  for (const auto& a : L.equalities) pool.add(f_atom(a), "equality");
  for (const auto& a : L.bounds) pool.add(f_atom(a), "bound");
  for (const auto& c : L.clauses) pool.add(c, "clause");
  pool.filter(data.states);
  return {pool.items(), data.states.size()};
}

inline TraceOnlyResult learn_only(const LoopProgram& prog, const RunConfig& cfg, Audit* audit = nullptr) {
  cfg.validate();
  std::vector<Valuation> inputs;
  Samples data = initial_samples(prog, cfg, &inputs);
  return learn_only(problem_for(prog, cfg, inputs), std::move(data), cfg, audit);
}

/// A CSV table: one column per variable, one row per state.
inline TraceOnlyResult learn_only(const dsl::CsvTable& table, const RunConfig& cfg, Audit* audit = nullptr) {
  cfg.validate();
  LearningProblem pb;
  pb.vars = table.header;
  pb.max_deg = cfg.max_deg > 0 ? cfg.max_deg : 2;
  Samples data;
  data.vars = table.header;
  dsl::Trace t;
  t.columns = table.header;
  t.rows = table.rows;
  data.add(t);
  return learn_only(pb, std::move(data), cfg, audit);
}

}  // namespace nlinv::cegis
