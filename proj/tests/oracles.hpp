#pragma once

// Property checks shared by the unit tests and the acceptance binary.

#include "nlinv/dlogic.hpp"
#include "nlinv/extract.hpp"
#include "nlinv/features.hpp"
#include "nlinv/gcln.hpp"

#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

namespace oracles {

using namespace nlinv;

struct Tally {
  std::size_t checks = 0;
  std::size_t failures = 0;
  std::string first_failure;

  void record(bool ok, const std::string& what) {
    ++checks;
    if (!ok) {
      if (failures == 0) first_failure = what;
      ++failures;
    }
  }
  bool ok() const { return checks > 0 && failures == 0; }
};

inline bool grad_close(double analytic, double fd, double rel = 1e-4) {
  return std::abs(analytic - fd) <= rel * std::max(std::abs(analytic), std::abs(fd)) + 1e-8;
}

// ---------------------------------------------------------------------------
// Extraction agrees with limit semantics at hard gates

inline Atom random_atom(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> c(-3, 3);
  Atom a;
  const Rel rels[] = {Rel::Eq, Rel::Ge, Rel::Le};
  a.rel = rels[rng() % 3];
  do {
    a.coeffs.clear();
    a.add(Term::var("x"), c(rng));
    a.add(Term::var("y"), c(rng));
  } while (a.coeffs.empty());
  a.constant = c(rng);
  return a;
}

inline extract::GatedNode random_tree(std::mt19937_64& rng, int depth, std::size_t& leaves, bool negations) {
  using extract::GatedNode;
  if (depth == 0 || rng() % 4 == 0) {
    GatedNode leaf = GatedNode::make_leaf(leaves++);
    if (negations && rng() % 4 == 0) return GatedNode::negate(leaf);
    return leaf;
  }
  std::size_t width = 1 + rng() % 3;
  std::vector<GatedNode> cs;
  std::vector<double> gs;
  for (std::size_t i = 0; i < width; ++i) {
    cs.push_back(random_tree(rng, depth - 1, leaves, negations));
    gs.push_back(static_cast<double>(rng() % 2));
  }
  auto kind = rng() % 2 ? GatedNode::Kind::TNorm : GatedNode::Kind::TConorm;
  GatedNode n = GatedNode::gated(kind, std::move(cs), std::move(gs));
  if (negations && rng() % 5 == 0) return GatedNode::negate(std::move(n));
  return n;
}

inline dsl::Valuation random_point(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> v(-3, 3);
  return {{"x", v(rng)}, {"y", v(rng)}};
}

/// Hard-gated m x n models (m, n <= 3) with exact-indicator atoms: the
/// extracted formula is true exactly where the model output is 1 and false
/// exactly where it is 0. Models are evaluated through the real forward pass
/// with near-limit constants on integer points.
inline Tally extraction_soundness_models(std::size_t models, std::size_t points, std::uint64_t seed) {
  Tally t;
  std::mt19937_64 rng(seed);
  const std::vector<Term> basis{Term::one(), Term::var("x"), Term::var("y")};
  dlogic::RelaxationConfig limit{1e-9, 1e9, 1e-9, 1e-9};
  for (std::size_t k = 0; k < models; ++k) {
    std::size_t m = 1 + rng() % 3, n = 1 + rng() % 3;
    std::vector<gcln::Activation> kinds;
    std::vector<DropoutMask> masks(m * n, DropoutMask{{true, true, true}, 0});
    std::vector<Atom> atoms;
    for (std::size_t i = 0; i < m * n; ++i) {
      atoms.push_back(random_atom(rng));
      kinds.push_back(atoms.back().rel == Rel::Eq   ? gcln::Activation::Equality
                      : atoms.back().rel == Rel::Ge ? gcln::Activation::GreaterEq
                                                    : gcln::Activation::LessEq);
    }
    auto model = gcln::make_model(3, m, n, kinds, masks, limit, seed + k);
    for (std::size_t i = 0; i < m * n; ++i) {
      auto& lit = model.literals[i];
      lit.w = {0.0, to_double(atoms[i].coeffs.count(Term::var("x")) ? atoms[i].coeffs.at(Term::var("x")) : 0),
               to_double(atoms[i].coeffs.count(Term::var("y")) ? atoms[i].coeffs.at(Term::var("y")) : 0)};
      lit.b = to_double(atoms[i].constant);
    }
    for (double& g : model.g_or) g = static_cast<double>(rng() % 2);
    for (double& g : model.g_and) g = static_cast<double>(rng() % 2);
    FormulaPtr f = extract::extract_formula(model, basis);
    for (std::size_t p = 0; p < points; ++p) {
      auto pt = random_point(rng);
      std::vector<double> row{1.0, to_double(pt.at("x")), to_double(pt.at("y"))};
      double out = gcln::forward(model, row);
      bool truth = eval(*f, pt);
      bool ok = (truth && std::abs(out - 1.0) < 1e-6) || (!truth && std::abs(out) < 1e-6);
      t.record(ok, "model " + std::to_string(k) + ": output " + std::to_string(out) + " vs " + to_string(*f));
    }
  }
  return t;
}

/// Random gated trees with negation nodes and indicator leaves.
inline Tally extraction_soundness_trees(std::size_t trees, std::size_t points, std::uint64_t seed) {
  Tally t;
  std::mt19937_64 rng(seed);
  for (std::size_t k = 0; k < trees; ++k) {
    std::size_t leaves = 0;
    auto tree = random_tree(rng, 3, leaves, true);
    std::vector<Atom> atoms;
    for (std::size_t i = 0; i < leaves; ++i) atoms.push_back(random_atom(rng));
    FormulaPtr f = extract::extract_tree(tree, [&](std::size_t i) { return f_atom(atoms[i]); });
    for (std::size_t p = 0; p < points; ++p) {
      auto pt = random_point(rng);
      double out = extract::eval_tree(tree, [&](std::size_t i) { return atoms[i].holds(pt) ? 1.0 : 0.0; });
      bool truth = eval(*f, pt);
      t.record((truth && out == 1.0) || (!truth && out == 0.0), "tree " + std::to_string(k));
    }
  }
  return t;
}

// ---------------------------------------------------------------------------
// Single-bound tightness

struct CloudResult {
  double max_violation = 0.0;  // largest -(w.x + b) over points
  double min_residual = 0.0;   // smallest w.x + b over points
  double bias_grad = 0.0;
};

/// Trains one >= literal (unit weights, free bias, no gates) on a random
/// 2-D cloud with max norm l, then brings the bias to a stationary point.
inline CloudResult train_single_bound(std::mt19937_64& rng, std::size_t npts, double l, double c1, double c2,
                                      std::uint64_t seed) {
  std::uniform_real_distribution<double> u(-1, 1);
  RealMatrix X;
  double biggest = 0;
  for (std::size_t i = 0; i < npts; ++i) {
    double x = u(rng) * 3, y = u(rng);
    X.push_back({x, y});
    biggest = std::max(biggest, std::hypot(x, y));
  }
  for (auto& r : X)
    for (double& v : r) v *= l / biggest;
  dlogic::RelaxationConfig cfg{c1, c2, 0.1, 0.5};
  auto model = gcln::make_model(2, 1, 1, {gcln::Activation::GreaterEq}, {DropoutMask{{true, true}, 0}}, cfg, seed);
  gcln::freeze_gates(model);
  gcln::TrainConfig tc;
  tc.seed = seed;
  tc.regularize_gates = false;
  tc.max_epochs = 4000;
  tc.lr = 0.02;
  tc.convergence_tol = 1e-10;
  gcln::train(model, X, tc);
  auto& lit = model.literals[0];
  auto dR = [&](double b) {
    double s = 0;
    for (const auto& r : X) s += dlogic::pbqu_ge_grad(lit.w[0] * r[0] + lit.w[1] * r[1] + b, cfg);
    return s;
  };
  // finish converging in b: bracket a sign change of dR/db and bisect
  double g0 = dR(lit.b);
  if (std::abs(g0) > 1e-12) {
    double lo = lit.b, hi = lit.b, step = 1e-3 * std::max(1.0, l);
    if (g0 > 0) {
      while (dR(hi) > 0) hi += (step *= 2);
    } else {
      while (dR(lo) < 0) lo -= (step *= 2);
    }
    for (int i = 0; i < 200; ++i) {
      double mid = 0.5 * (lo + hi);
      (dR(mid) > 0 ? lo : hi) = mid;
    }
    lit.b = 0.5 * (lo + hi);
  }
  CloudResult r;
  r.min_residual = 1e300;
  for (const auto& row : X) {
    double d = lit.residual(row);
    r.max_violation = std::max(r.max_violation, -d);
    r.min_residual = std::min(r.min_residual, d);
  }
  r.bias_grad = dR(lit.b);
  return r;
}

inline Tally bound_tightness(std::size_t clouds, std::uint64_t seed) {
  Tally t;
  std::mt19937_64 rng(seed);
  for (std::size_t k = 0; k < clouds; ++k) {
    std::size_t npts = 10 + rng() % 41;
    double l = 1.0 + static_cast<double>(rng() % 5);
    double c1 = l;  // <= 2l
    double c2 = 8.0 * std::sqrt(static_cast<double>(npts)) * l * l / c1 * 1.01;
    auto r = train_single_bound(rng, npts, l, c1, c2, seed * 1000 + k);
    double tol = c1 / std::sqrt(3.0);
    bool ok = r.max_violation <= tol && r.min_residual <= tol;
    t.record(ok, "cloud " + std::to_string(k) + ": violation " + std::to_string(r.max_violation) + ", closest " +
                     std::to_string(r.min_residual) + ", bound " + std::to_string(tol));
  }
  return t;
}

// ---------------------------------------------------------------------------
// Gradients

inline double central(const std::function<double(double)>& f, double x, double h = 1e-5) {
  return (f(x + h) - f(x - h)) / (2 * h);
}

/// Every differentiable-logic primitive at `points` random inputs.
inline Tally primitive_gradients(std::size_t points, std::uint64_t seed) {
  Tally t;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0, 1), wide(-5, 5);
  dlogic::RelaxationConfig cfg;
  auto check = [&](double a, double f, const char* what) { t.record(grad_close(a, f), what); };
  for (std::size_t i = 0; i < points; ++i) {
    double x = unit(rng), y = unit(rng);
    auto p = dlogic::tnorm_grad(x, y);
    check(p.dx, central([&](double v) { return dlogic::tnorm(v, y); }, x), "tnorm dx");
    check(p.dy, central([&](double v) { return dlogic::tnorm(x, v); }, y), "tnorm dy");
    auto q = dlogic::tconorm_grad(x, y);
    check(q.dx, central([&](double v) { return dlogic::tconorm(v, y); }, x), "tconorm dx");
    check(q.dy, central([&](double v) { return dlogic::tconorm(x, v); }, y), "tconorm dy");

    std::size_t n = 1 + rng() % 3;
    std::vector<double> xs(n), gs(n), dx(n), dg(n);
    for (std::size_t k = 0; k < n; ++k) {
      xs[k] = unit(rng);
      gs[k] = unit(rng);
    }
    for (int which = 0; which < 2; ++which) {
      auto eval = [&](const std::vector<double>& a, const std::vector<double>& b) {
        return which == 0 ? dlogic::gated_tnorm(a, b) : dlogic::gated_tconorm(a, b);
      };
      if (which == 0)
        dlogic::gated_tnorm_grad(xs, gs, dx, dg);
      else
        dlogic::gated_tconorm_grad(xs, gs, dx, dg);
      for (std::size_t k = 0; k < n; ++k) {
        auto fx = [&](double v) {
          auto a = xs;
          a[k] = v;
          return eval(a, gs);
        };
        auto fg = [&](double v) {
          auto b = gs;
          b[k] = v;
          return eval(xs, b);
        };
        check(dx[k], central(fx, xs[k]), which == 0 ? "gated tnorm dx" : "gated tconorm dx");
        check(dg[k], central(fg, gs[k]), which == 0 ? "gated tnorm dg" : "gated tconorm dg");
      }
    }

    double d = wide(rng);
    const double breaks[] = {0.0, cfg.epsilon, -cfg.epsilon};
    bool near = false;
    for (double b : breaks) near = near || std::abs(d - b) < 1e-4;
    if (!near) {
      check(dlogic::pbqu_ge_grad(d, cfg), central([&](double v) { return dlogic::pbqu_ge(v, cfg); }, d), "pbqu ge");
      check(dlogic::pbqu_le_grad(d, cfg), central([&](double v) { return dlogic::pbqu_le(v, cfg); }, d), "pbqu le");
      check(dlogic::pbqu_gt_grad(d, cfg), central([&](double v) { return dlogic::pbqu_gt(v, cfg); }, d), "pbqu gt");
      check(dlogic::pbqu_lt_grad(d, cfg), central([&](double v) { return dlogic::pbqu_lt(v, cfg); }, d), "pbqu lt");
    }
    double s = 0.05 + unit(rng);
    double e = wide(rng) * s;
    check(dlogic::gauss_eq_grad(e, s), central([&](double v) { return dlogic::gauss_eq(v, s); }, e), "gauss");
  }
  return t;
}

/// Full model loss against central differences for tiny random models
/// (2 clauses x 2 literals x 3 terms), one random parameter per point.
inline Tally model_gradients(std::size_t points, std::uint64_t seed) {
  Tally t;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-2, 2), g(0.05, 0.95);
  const gcln::Activation cycle[] = {gcln::Activation::Equality, gcln::Activation::GreaterEq,
                                    gcln::Activation::LessEq};
  std::size_t done = 0;
  while (done < points) {
    std::vector<gcln::Activation> kinds;
    for (int i = 0; i < 4; ++i) kinds.push_back(cycle[rng() % 3]);
    std::vector<DropoutMask> masks(4, DropoutMask{{true, true, true}, 0});
    dlogic::RelaxationConfig cfg;
    cfg.sigma = 0.5 + g(rng);
    auto model = gcln::make_model(3, 2, 2, kinds, masks, cfg, rng());
    for (auto& lit : model.literals) lit.b = u(rng);
    for (double& x : model.g_or) x = g(rng);
    for (double& x : model.g_and) x = g(rng);
    RealMatrix X;
    for (int r = 0; r < 4; ++r) X.push_back({1.0, u(rng), u(rng)});
    gcln::Lambdas lam{g(rng), g(rng)};
    const double h = 1e-6;
    bool near = false;
    for (const auto& row : X)
      for (const auto& lit : model.literals)
        if (lit.kind != gcln::Activation::Equality && std::abs(lit.residual(row)) < 1e-3) near = true;
    if (near) continue;
    std::vector<double> grad;
    gcln::loss_and_grad(model, X, lam, model.cfg, grad);
    auto p = gcln::flatten(model);
    std::size_t i = rng() % p.size();
    auto q = p;
    q[i] += h;
    auto a = model;
    gcln::unflatten(a, q);
    q[i] -= 2 * h;
    auto b = model;
    gcln::unflatten(b, q);
    double fd = (gcln::loss(a, X, lam) - gcln::loss(b, X, lam)) / (2 * h);
    t.record(grad_close(grad[i], fd), "model parameter " + std::to_string(i));
    ++done;
  }
  return t;
}

// ---------------------------------------------------------------------------
// Normalization keeps the sign of every linear form

inline int sign_with_tolerance(double v, double scale) {
  if (std::abs(v) <= 1e-9 * scale) return 0;
  return v > 0 ? 1 : -1;
}

inline Tally normalization_signs(std::size_t pairs, std::uint64_t seed) {
  Tally t;
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> v(-50, 50), dim(2, 8);
  for (std::size_t k = 0; k < pairs; ++k) {
    std::size_t n = static_cast<std::size_t>(dim(rng));
    std::vector<Rational> row{1};
    for (std::size_t i = 1; i < n; ++i) row.push_back(Rational(v(rng), 1 + std::abs(v(rng)) % 9));
    std::vector<Rational> w;
    for (std::size_t i = 0; i < n; ++i) w.push_back(Rational(v(rng), 1 + std::abs(v(rng)) % 5));
    if (k % 4 == 0) {
      // force w . row == 0 through the constant column
      Rational s = 0;
      for (std::size_t i = 1; i < n; ++i) s += w[i] * row[i];
      w[0] = -s;
    }
    Rational exact = 0;
    for (std::size_t i = 0; i < n; ++i) exact += w[i] * row[i];
    int before = exact == 0 ? 0 : (exact > 0 ? 1 : -1);
    auto norm = normalize_rows({row}, 10.0)[0];
    double dot = 0, scale = 0;
    for (std::size_t i = 0; i < n; ++i) {
      dot += to_double(w[i]) * norm[i];
      scale += std::abs(to_double(w[i]) * norm[i]);
    }
    int after = sign_with_tolerance(dot, scale);
    t.record(before == after, "pair " + std::to_string(k));
  }
  return t;
}

// ---------------------------------------------------------------------------
// A trained three-clause model with one clause switched off

inline void set_literal(gcln::Literal& lit, std::vector<double> w, double b) {
  double s = 0;
  for (double x : w) s += x * x;
  s = std::sqrt(s);
  for (double& x : w) x /= s;
  lit.w = w;
  lit.b = b / s;
}

inline gcln::GclnModel fig4_model() {
  using gcln::Activation;
  std::vector<Activation> kinds(9, Activation::Equality);
  std::vector<DropoutMask> masks(9, DropoutMask{{true, true, true, true}, 0});
  auto m = gcln::make_model(4, 3, 3, kinds, masks, {}, 1);
  // clause 0: 3y - 3z - 2 = 0 alone
  set_literal(m.literal(0, 0), {0, 0.001, 3.002, -2.999}, -2.001);
  set_literal(m.literal(0, 1), {0, 1, 1, 1}, 7);
  set_literal(m.literal(0, 2), {0, 2, 0, 1}, 0);
  // clause 1: x - 3z = 0 or x + y + z = 0
  set_literal(m.literal(1, 0), {0, 1.001, 0, -3.003}, 0);
  set_literal(m.literal(1, 1), {0, 0.998, 1.0, 1.002}, 0.001);
  set_literal(m.literal(1, 2), {0, 5, 1, 0}, 1);
  // clause 2 is switched off
  set_literal(m.literal(2, 0), {0, 1, -1, 0}, 3);
  set_literal(m.literal(2, 1), {0, 0, 1, 0}, 1);
  set_literal(m.literal(2, 2), {0, 0, 0, 1}, 1);
  m.g_or = {0.99, 0.02, 0.01, 0.97, 0.98, 0.03, 0.9, 0.9, 0.9};
  m.g_and = {0.99, 0.98, 0.01};
  return m;
}

}  // namespace oracles
