#pragma once

// Gated continuous logic network: a gated t-norm (AND) over m clauses, each
// a gated t-conorm (OR) over n literals. A literal relaxes one atom
// w . x + b {=, >=, <=} 0 over the term basis.

#include "nlinv/dlogic.hpp"
#include "nlinv/features.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <string>
#include <vector>

namespace nlinv::gcln {

using dlogic::RelaxationConfig;

enum class Activation { Equality, GreaterEq, LessEq };

inline const char* activation_name(Activation a) {
  switch (a) {
    case Activation::Equality:
      return "eq";
    case Activation::GreaterEq:
      return "ge";
    case Activation::LessEq:
      return "le";
  }
  return "?";
}

inline double activate(Activation a, double d, const RelaxationConfig& cfg) {
  switch (a) {
    case Activation::Equality:
      return dlogic::gauss_eq(d, cfg.sigma);
    case Activation::GreaterEq:
      return dlogic::pbqu_ge(d, cfg);
    case Activation::LessEq:
      return dlogic::pbqu_le(d, cfg);
  }
  return 0.0;
}

inline double activate_grad(Activation a, double d, const RelaxationConfig& cfg) {
  switch (a) {
    case Activation::Equality:
      return dlogic::gauss_eq_grad(d, cfg.sigma);
    case Activation::GreaterEq:
      return dlogic::pbqu_ge_grad(d, cfg);
    case Activation::LessEq:
      return dlogic::pbqu_le_grad(d, cfg);
  }
  return 0.0;
}

struct Literal {
  std::vector<double> w;  // one weight per basis term; masked entries stay 0
  double b = 0.0;
  bool train_bias = true;
  Activation kind = Activation::Equality;
  DropoutMask mask;

  double residual(std::span<const double> x) const {
    double d = b;
    for (std::size_t k = 0; k < w.size(); ++k) d += w[k] * x[k];
    return d;
  }
};

struct GclnModel {
  std::size_t m = 10;  // clauses
  std::size_t n = 2;   // literals per clause
  std::vector<Literal> literals;  // clause-major, m * n
  std::vector<double> g_or;       // m * n
  std::vector<double> g_and;      // m
  RelaxationConfig cfg;
  bool gates_frozen = false;  // ungated variant: all gates pinned at 1
  bool project_weights = true;

  Literal& literal(std::size_t clause, std::size_t k) { return literals[clause * n + k]; }
  const Literal& literal(std::size_t clause, std::size_t k) const { return literals[clause * n + k]; }
  std::size_t basis_size() const { return literals.empty() ? 0 : literals[0].w.size(); }
};

struct GateInit {
  double and_gate = 0.95;
  double or_gate = 0.5;
};

/// Weights uniform on the unit sphere over the kept terms of each mask.
inline void init_weights(Literal& lit, std::mt19937_64& rng) {
  std::normal_distribution<double> nd(0.0, 1.0);
  double ss = 0.0;
  for (std::size_t k = 0; k < lit.w.size(); ++k) {
    lit.w[k] = lit.mask.keep[k] ? nd(rng) : 0.0;
    ss += lit.w[k] * lit.w[k];
  }
  if (ss == 0.0) {
    for (std::size_t k = 0; k < lit.w.size(); ++k)
      if (lit.mask.keep[k]) {
        lit.w[k] = 1.0;
        ss = 1.0;
        break;
      }
  }
  double s = std::sqrt(ss);
  if (s > 0)
    for (double& x : lit.w) x /= s;
}

/// Builds an m x n model; masks and kinds are given per literal.
inline GclnModel make_model(std::size_t basis_size, std::size_t m, std::size_t n, const std::vector<Activation>& kinds,
                            const std::vector<DropoutMask>& masks, const RelaxationConfig& cfg, std::uint64_t seed,
                            GateInit gates = {}) {
  if (kinds.size() != m * n || masks.size() != m * n) throw ConfigError("need one kind and one mask per literal");
  GclnModel model;
  model.m = m;
  model.n = n;
  model.cfg = cfg;
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < m * n; ++i) {
    Literal lit;
    lit.kind = kinds[i];
    lit.mask = masks[i];
    if (lit.mask.keep.size() != basis_size) throw ConfigError("mask length differs from basis size");
    lit.w.assign(basis_size, 0.0);
    init_weights(lit, rng);
    model.literals.push_back(std::move(lit));
  }
  model.g_or.assign(m * n, gates.or_gate);
  model.g_and.assign(m, gates.and_gate);
  return model;
}

/// Pins every gate at 1 and excludes them from training.
inline void freeze_gates(GclnModel& model) {
  model.gates_frozen = true;
  std::fill(model.g_or.begin(), model.g_or.end(), 1.0);
  std::fill(model.g_and.begin(), model.g_and.end(), 1.0);
}

// ---------------------------------------------------------------------------
// Forward pass

inline double forward(const GclnModel& model, std::span<const double> row, const RelaxationConfig& cfg) {
  std::vector<double> clause(model.m);
  std::vector<double> acts(model.n);
  for (std::size_t c = 0; c < model.m; ++c) {
    for (std::size_t k = 0; k < model.n; ++k) {
      const Literal& lit = model.literal(c, k);
      acts[k] = activate(lit.kind, lit.residual(row), cfg);
    }
    clause[c] = dlogic::gated_tconorm(acts, std::span<const double>(model.g_or.data() + c * model.n, model.n));
  }
  return dlogic::gated_tnorm(clause, model.g_and);
}

inline double forward(const GclnModel& model, std::span<const double> row) { return forward(model, row, model.cfg); }

struct Lambdas {
  double l1 = 0.0;
  double l2 = 0.0;
};

inline double loss(const GclnModel& model, const RealMatrix& X, Lambdas lam, const RelaxationConfig& cfg) {
  double total = 0.0;
  for (const auto& row : X) total += 1.0 - forward(model, row, cfg);
  for (double g : model.g_and) total += lam.l1 * (1.0 - g);
  for (double g : model.g_or) total += lam.l2 * g;
  return total;
}

inline double loss(const GclnModel& model, const RealMatrix& X, Lambdas lam) { return loss(model, X, lam, model.cfg); }

// ---------------------------------------------------------------------------
// Parameters as one flat vector: per literal [w..., b], then g_or, then g_and.

inline std::size_t param_count(const GclnModel& model) {
  return model.literals.size() * (model.basis_size() + 1) + model.g_or.size() + model.g_and.size();
}

inline std::vector<double> flatten(const GclnModel& model) {
  std::vector<double> p;
  p.reserve(param_count(model));
  for (const auto& lit : model.literals) {
    p.insert(p.end(), lit.w.begin(), lit.w.end());
    p.push_back(lit.b);
  }
  p.insert(p.end(), model.g_or.begin(), model.g_or.end());
  p.insert(p.end(), model.g_and.begin(), model.g_and.end());
  return p;
}

inline void unflatten(GclnModel& model, std::span<const double> p) {
  std::size_t i = 0;
  for (auto& lit : model.literals) {
    for (double& w : lit.w) w = p[i++];
    lit.b = p[i++];
  }
  for (double& g : model.g_or) g = p[i++];
  for (double& g : model.g_and) g = p[i++];
}

/// Loss and its gradient with respect to flatten(model). Masked weights,
/// frozen biases and frozen gates get zero gradient.
inline double loss_and_grad(const GclnModel& model, const RealMatrix& X, Lambdas lam, const RelaxationConfig& cfg,
                            std::vector<double>& grad) {
  const std::size_t B = model.basis_size();
  const std::size_t L = model.literals.size();
  const std::size_t stride = B + 1;
  grad.assign(param_count(model), 0.0);
  double* g_or_grad = grad.data() + L * stride;
  double* g_and_grad = g_or_grad + model.g_or.size();

  std::vector<double> d(L), act(L), dact(L);
  std::vector<double> clause(model.m), dclause(model.m), dg_and(model.m);
  std::vector<double> dacts(model.n), dg_or(model.n);
  std::vector<double> dlit(L);
  double total = 0.0;
  for (const auto& row : X) {
    for (std::size_t i = 0; i < L; ++i) {
      const Literal& lit = model.literals[i];
      d[i] = lit.residual(row);
      act[i] = activate(lit.kind, d[i], cfg);
    }
    for (std::size_t c = 0; c < model.m; ++c)
      clause[c] = dlogic::gated_tconorm(std::span<const double>(act.data() + c * model.n, model.n),
                                        std::span<const double>(model.g_or.data() + c * model.n, model.n));
    double out = dlogic::gated_tnorm_grad(clause, model.g_and, dclause, dg_and);
    total += 1.0 - out;
    // d(1 - out) = -d(out)
    for (std::size_t c = 0; c < model.m; ++c) {
      g_and_grad[c] -= dg_and[c];
      dlogic::gated_tconorm_grad(std::span<const double>(act.data() + c * model.n, model.n),
                                 std::span<const double>(model.g_or.data() + c * model.n, model.n), dacts, dg_or);
      for (std::size_t k = 0; k < model.n; ++k) {
        std::size_t i = c * model.n + k;
        g_or_grad[i] -= dclause[c] * dg_or[k];
        dlit[i] = -dclause[c] * dacts[k];
      }
    }
    for (std::size_t i = 0; i < L; ++i) {
      const Literal& lit = model.literals[i];
      double gd = dlit[i] * activate_grad(lit.kind, d[i], cfg);
      if (gd == 0.0) continue;
      double* gw = grad.data() + i * stride;
      for (std::size_t k = 0; k < B; ++k) gw[k] += gd * row[k];
      gw[B] += gd;
    }
  }
  for (std::size_t c = 0; c < model.m; ++c) {
    total += lam.l1 * (1.0 - model.g_and[c]);
    g_and_grad[c] -= lam.l1;
  }
  for (std::size_t i = 0; i < model.g_or.size(); ++i) {
    total += lam.l2 * model.g_or[i];
    g_or_grad[i] += lam.l2;
  }
  for (std::size_t i = 0; i < L; ++i) {
    const Literal& lit = model.literals[i];
    for (std::size_t k = 0; k < B; ++k)
      if (!lit.mask.keep[k]) grad[i * stride + k] = 0.0;
    if (!lit.train_bias) grad[i * stride + B] = 0.0;
  }
  if (model.gates_frozen) std::fill(grad.begin() + static_cast<std::ptrdiff_t>(L * stride), grad.end(), 0.0);
  return total;
}

// ---------------------------------------------------------------------------
// Training

/// Unit L2 projection. Returns false when w is zero (caller reinitializes).
inline bool weight_project(std::vector<double>& w) {
  double ss = 0.0;
  for (double x : w) ss += x * x;
  if (ss == 0.0 || !std::isfinite(ss)) return false;
  double s = std::sqrt(ss);
  for (double& x : w) x /= s;
  return true;
}

struct Schedule {
  double init;
  double multiplier;
  double bound;  // floor when shrinking, ceiling when growing

  double next(double v) const {
    double x = v * multiplier;
    return multiplier < 1.0 ? std::max(bound, x) : std::min(bound, x);
  }
};

struct TrainConfig {
  double lr = 0.01;
  double lr_decay = 0.9996;
  std::size_t max_epochs = 5000;
  Schedule lambda1{1.0, 0.999, 0.1};
  Schedule lambda2{0.001, 1.001, 0.1};
  std::uint64_t seed = 0;
  double convergence_tol = 1e-6;
  std::size_t patience = 100;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  // Geometric annealing of the equality width from sigma_start down to the
  // model's sigma over the first sigma_anneal_epochs; 0 disables it.
  double sigma_start = 0.0;
  std::size_t sigma_anneal_epochs = 2500;
  bool regularize_gates = true;
};

struct TrainReport {
  std::uint64_t seed = 0;
  std::size_t epochs = 0;
  double initial_loss = 0.0;
  double final_loss = 0.0;
  bool converged = false;
  std::vector<double> g_and;
  std::vector<double> g_or;
  std::vector<std::vector<double>> weights;
  std::vector<double> biases;
  std::vector<std::string> kinds;
  std::vector<double> mean_activation;
  std::vector<std::size_t> reinitialized;  // literal indices with zero weights

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["seed"] = seed;
    j["epochs"] = epochs;
    j["initial_loss"] = initial_loss;
    j["final_loss"] = final_loss;
    j["converged"] = converged;
    j["g_and"] = g_and;
    j["g_or"] = g_or;
    nlohmann::json lits = nlohmann::json::array();
    for (std::size_t i = 0; i < weights.size(); ++i)
      lits.push_back({{"kind", kinds[i]}, {"w", weights[i]}, {"b", biases[i]}, {"mean_activation", mean_activation[i]}});
    j["literals"] = lits;
    j["reinitialized"] = reinitialized;
    return j;
  }
};

/// Mean activation of one literal over the rows of X.
inline double mean_activation(const GclnModel& model, std::size_t literal, const RealMatrix& X) {
  if (X.empty()) return 0.0;
  const Literal& lit = model.literals[literal];
  double s = 0.0;
  for (const auto& row : X) s += activate(lit.kind, lit.residual(row), model.cfg);
  return s / static_cast<double>(X.size());
}

namespace detail {

inline void project(GclnModel& model, std::mt19937_64& rng, std::vector<std::size_t>& reinit) {
  for (std::size_t i = 0; i < model.literals.size(); ++i) {
    Literal& lit = model.literals[i];
    for (std::size_t k = 0; k < lit.w.size(); ++k)
      if (!lit.mask.keep[k]) lit.w[k] = 0.0;
    if (model.project_weights && !weight_project(lit.w)) {
      init_weights(lit, rng);
      reinit.push_back(i);
    }
  }
  for (double& g : model.g_or) g = std::clamp(g, 0.0, 1.0);
  for (double& g : model.g_and) g = std::clamp(g, 0.0, 1.0);
  if (model.gates_frozen) {
    std::fill(model.g_or.begin(), model.g_or.end(), 1.0);
    std::fill(model.g_and.begin(), model.g_and.end(), 1.0);
  }
}

}  // namespace detail

/// Full-batch Adam. After every step weights are projected to the unit
/// sphere, masked terms re-zeroed and gates clamped to [0, 1].
inline TrainReport train(GclnModel& model, const RealMatrix& X, const TrainConfig& tc) {
  if (X.empty()) throw TrainingError("cannot train on an empty sample matrix");
  TrainReport rep;
  rep.seed = tc.seed;
  std::mt19937_64 rng(tc.seed ^ 0x9e3779b97f4a7c15ULL);
  detail::project(model, rng, rep.reinitialized);

  RelaxationConfig rc = model.cfg;
  const double sigma_end = model.cfg.sigma;
  const bool anneal = tc.sigma_start > sigma_end && tc.sigma_anneal_epochs > 0;
  auto sigma_at = [&](std::size_t epoch) {
    if (!anneal || epoch >= tc.sigma_anneal_epochs) return sigma_end;
    double f = static_cast<double>(epoch) / static_cast<double>(tc.sigma_anneal_epochs);
    return tc.sigma_start * std::pow(sigma_end / tc.sigma_start, f);
  };

  Lambdas lam{tc.lambda1.init, tc.lambda2.init};
  if (!tc.regularize_gates) lam = {0.0, 0.0};
  std::vector<double> params = flatten(model);
  std::vector<double> grad, m1(params.size(), 0.0), m2(params.size(), 0.0);
  std::vector<double> history;
  double lr = tc.lr;
  double b1t = 1.0, b2t = 1.0;
  std::size_t epoch = 0;
  for (; epoch < tc.max_epochs; ++epoch) {
    rc.sigma = sigma_at(epoch);
    double L = loss_and_grad(model, X, lam, rc, grad);
    if (!std::isfinite(L)) {
      std::ostringstream os;
      os << "non-finite loss at epoch " << epoch << " (sigma " << rc.sigma << ", lr " << lr << ")";
      throw TrainingError(os.str());
    }
    if (epoch == 0) rep.initial_loss = L;
    history.push_back(L);
    const std::size_t settle = anneal ? tc.sigma_anneal_epochs : 0;
    if (epoch >= settle + tc.patience && history[epoch - tc.patience] - L < tc.convergence_tol) {
      rep.converged = true;
      break;
    }
    b1t *= tc.beta1;
    b2t *= tc.beta2;
    for (std::size_t i = 0; i < params.size(); ++i) {
      m1[i] = tc.beta1 * m1[i] + (1 - tc.beta1) * grad[i];
      m2[i] = tc.beta2 * m2[i] + (1 - tc.beta2) * grad[i] * grad[i];
      double mh = m1[i] / (1 - b1t);
      double vh = m2[i] / (1 - b2t);
      params[i] -= lr * mh / (std::sqrt(vh) + tc.adam_eps);
    }
    unflatten(model, params);
    detail::project(model, rng, rep.reinitialized);
    params = flatten(model);
    lr *= tc.lr_decay;
    if (tc.regularize_gates) lam = {tc.lambda1.next(lam.l1), tc.lambda2.next(lam.l2)};
  }
  rep.epochs = epoch;
  rep.final_loss = loss(model, X, lam);
  rep.g_and = model.g_and;
  rep.g_or = model.g_or;
  for (std::size_t i = 0; i < model.literals.size(); ++i) {
    rep.weights.push_back(model.literals[i].w);
    rep.biases.push_back(model.literals[i].b);
    rep.kinds.push_back(activation_name(model.literals[i].kind));
    rep.mean_activation.push_back(mean_activation(model, i, X));
  }
  return rep;
}

}  // namespace nlinv::gcln
