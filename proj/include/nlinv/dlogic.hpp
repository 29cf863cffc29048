#pragma once

// Continuous truth values on [0, 1]: t-norms, gated connectives and the
// equality/inequality activations, each with analytic first derivatives.

#include "nlinv/error.hpp"

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

namespace nlinv::dlogic {

struct RelaxationConfig {
  double c1 = 1.0;
  double c2 = 50.0;
  double sigma = 0.1;
  double epsilon = 0.5;

  void validate() const {
    if (!(c1 > 0) || !(c2 > 0) || !(sigma > 0) || !(epsilon > 0))
      throw ConfigError("relaxation constants must be positive");
    if (!(c1 < c2)) throw ConfigError("relaxation requires c1 < c2");
  }
};

struct Partials {
  double dx = 0.0;
  double dy = 0.0;
};

// T-norm policies. Each provides the operator and its partial derivatives.

struct ProductTNorm {
  static double apply(double x, double y) { return x * y; }
  static Partials grad(double x, double y) { return {y, x}; }
};

struct GodelTNorm {
  static double apply(double x, double y) { return std::min(x, y); }
  static Partials grad(double x, double y) { return x <= y ? Partials{1.0, 0.0} : Partials{0.0, 1.0}; }
};

struct LukasiewiczTNorm {
  static double apply(double x, double y) { return std::max(0.0, x + y - 1.0); }
  static Partials grad(double x, double y) { return x + y - 1.0 > 0.0 ? Partials{1.0, 1.0} : Partials{0.0, 0.0}; }
};

template <typename T = ProductTNorm>
double tnorm(double x, double y) {
  return T::apply(x, y);
}

template <typename T = ProductTNorm>
Partials tnorm_grad(double x, double y) {
  return T::grad(x, y);
}

/// De Morgan dual: 1 - T(1 - x, 1 - y).
template <typename T = ProductTNorm>
double tconorm(double x, double y) {
  return 1.0 - T::apply(1.0 - x, 1.0 - y);
}

template <typename T = ProductTNorm>
Partials tconorm_grad(double x, double y) {
  return T::grad(1.0 - x, 1.0 - y);
}

inline double negation(double t) { return 1.0 - t; }

namespace detail {

/// Left fold of T over us, with d(result)/d(u_i) written to du.
template <typename T>
double fold_with_grad(std::span<const double> us, std::span<double> du) {
  const std::size_t n = us.size();
  std::vector<double> acc(n);
  acc[0] = us[0];
  for (std::size_t i = 1; i < n; ++i) acc[i] = T::apply(acc[i - 1], us[i]);
  if (!du.empty()) {
    double back = 1.0;  // d(result)/d(acc[i])
    for (std::size_t i = n; i-- > 1;) {
      Partials p = T::grad(acc[i - 1], us[i]);
      du[i] = back * p.dy;
      back *= p.dx;
    }
    du[0] = back;
  }
  return acc[n - 1];
}

inline void check_sizes(std::size_t xs, std::size_t gs) {
  if (xs == 0 || xs != gs) throw Error("gated connective needs matching, non-empty inputs and gates");
}

}  // namespace detail

/// T over (1 + g_i (x_i - 1)). A gate of 0 removes its operand.
template <typename T = ProductTNorm>
double gated_tnorm(std::span<const double> xs, std::span<const double> gs) {
  detail::check_sizes(xs.size(), gs.size());
  std::vector<double> us(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) us[i] = 1.0 + gs[i] * (xs[i] - 1.0);
  return detail::fold_with_grad<T>(us, {});
}

template <typename T = ProductTNorm>
double gated_tnorm_grad(std::span<const double> xs, std::span<const double> gs, std::span<double> dxs,
                        std::span<double> dgs) {
  detail::check_sizes(xs.size(), gs.size());
  const std::size_t n = xs.size();
  std::vector<double> us(n), du(n);
  for (std::size_t i = 0; i < n; ++i) us[i] = 1.0 + gs[i] * (xs[i] - 1.0);
  double v = detail::fold_with_grad<T>(us, du);
  for (std::size_t i = 0; i < n; ++i) {
    dxs[i] = du[i] * gs[i];
    dgs[i] = du[i] * (xs[i] - 1.0);
  }
  return v;
}

/// 1 - T over (1 - g_i x_i). A gate of 0 removes its operand.
template <typename T = ProductTNorm>
double gated_tconorm(std::span<const double> xs, std::span<const double> gs) {
  detail::check_sizes(xs.size(), gs.size());
  std::vector<double> us(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) us[i] = 1.0 - gs[i] * xs[i];
  return 1.0 - detail::fold_with_grad<T>(us, {});
}

template <typename T = ProductTNorm>
double gated_tconorm_grad(std::span<const double> xs, std::span<const double> gs, std::span<double> dxs,
                          std::span<double> dgs) {
  detail::check_sizes(xs.size(), gs.size());
  const std::size_t n = xs.size();
  std::vector<double> us(n), du(n);
  for (std::size_t i = 0; i < n; ++i) us[i] = 1.0 - gs[i] * xs[i];
  double v = 1.0 - detail::fold_with_grad<T>(us, du);
  for (std::size_t i = 0; i < n; ++i) {
    dxs[i] = du[i] * gs[i];
    dgs[i] = du[i] * xs[i];
  }
  return v;
}

// ---------------------------------------------------------------------------
// Activations. d is the signed residual t - u of the relaxed atom.

/// Piecewise biased quadratic unit for t >= u: steep below the boundary
/// (scale c1), shallow above it (scale c2).
inline double pbqu_ge(double d, const RelaxationConfig& cfg) {
  double c = d < 0 ? cfg.c1 : cfg.c2;
  return c * c / (d * d + c * c);
}

/// Derivative of pbqu_ge. Both one-sided derivatives vanish at d = 0.
inline double pbqu_ge_grad(double d, const RelaxationConfig& cfg) {
  double c = d < 0 ? cfg.c1 : cfg.c2;
  double q = d * d + c * c;
  return -2.0 * d * c * c / (q * q);
}

inline double pbqu_le(double d, const RelaxationConfig& cfg) { return pbqu_ge(-d, cfg); }
inline double pbqu_le_grad(double d, const RelaxationConfig& cfg) { return -pbqu_ge_grad(-d, cfg); }

inline double pbqu_gt(double d, const RelaxationConfig& cfg) { return pbqu_ge(d - cfg.epsilon, cfg); }
inline double pbqu_gt_grad(double d, const RelaxationConfig& cfg) { return pbqu_ge_grad(d - cfg.epsilon, cfg); }

inline double pbqu_lt(double d, const RelaxationConfig& cfg) { return pbqu_le(d + cfg.epsilon, cfg); }
inline double pbqu_lt_grad(double d, const RelaxationConfig& cfg) { return pbqu_le_grad(d + cfg.epsilon, cfg); }

inline double gauss_eq(double d, double sigma) { return std::exp(-d * d / (2.0 * sigma * sigma)); }
inline double gauss_eq_grad(double d, double sigma) { return -d / (sigma * sigma) * gauss_eq(d, sigma); }

}  // namespace nlinv::dlogic
