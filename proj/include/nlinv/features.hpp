#pragma once

// Term basis construction, growth-rate filtering, row normalization and
// term dropout.

#include "nlinv/interpreter.hpp"
#include "nlinv/term.hpp"

#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <string>
#include <vector>

namespace nlinv {

using RationalMatrix = std::vector<std::vector<Rational>>;
using RealMatrix = std::vector<std::vector<double>>;

namespace detail {

inline void exponent_vectors(std::size_t nvars, int degree, std::size_t i, std::vector<int>& cur,
                             std::vector<std::vector<int>>& out) {
  if (i + 1 == nvars) {
    cur[i] = degree;
    out.push_back(cur);
    return;
  }
  for (int e = degree; e >= 0; --e) {
    cur[i] = e;
    exponent_vectors(nvars, degree - e, i + 1, cur, out);
  }
  cur[i] = 0;
}

}  // namespace detail

/// All monomials of total degree <= max_deg over vars followed by
/// frozen_init_vars, in graded lexicographic order, then one term per
/// ordered pair of distinct program variables for each external function.
inline std::vector<Term> enumerate_terms(const std::vector<std::string>& vars, int max_deg,
                                         const std::vector<dsl::ExternalFn>& externals = {},
                                         const std::vector<std::string>& frozen_init_vars = {}) {
  std::vector<std::string> all = vars;
  all.insert(all.end(), frozen_init_vars.begin(), frozen_init_vars.end());
  std::vector<Term> out{Term::one()};
  if (!all.empty()) {
    for (int d = 1; d <= max_deg; ++d) {
      std::vector<std::vector<int>> exps;
      std::vector<int> cur(all.size(), 0);
      detail::exponent_vectors(all.size(), d, 0, cur, exps);
      for (const auto& e : exps) {
        std::vector<std::pair<std::string, int>> fs;
        for (std::size_t i = 0; i < all.size(); ++i)
          if (e[i] > 0) fs.push_back({all[i], e[i]});
        out.push_back(Term::monomial(std::move(fs)));
      }
    }
  }
  for (const auto& f : externals)
    for (const auto& a : vars)
      for (const auto& b : vars)
        if (a != b) out.push_back(Term::external(f.name, a, b));
  return out;
}

inline std::vector<std::string> term_names(const std::vector<Term>& basis) {
  std::vector<std::string> out;
  for (const auto& t : basis) out.push_back(t.name());
  return out;
}

/// Evaluates the basis on each state. States where some term is undefined
/// (an external function outside its domain) are skipped.
inline RationalMatrix evaluate_terms(const std::vector<Term>& basis, const std::vector<dsl::Valuation>& states,
                                     std::size_t* skipped = nullptr) {
  RationalMatrix out;
  out.reserve(states.size());
  for (const auto& s : states) {
    std::vector<Rational> row;
    row.reserve(basis.size());
    try {
      for (const auto& t : basis) row.push_back(t.eval(s));
    } catch (const EvalError&) {
      if (skipped) ++*skipped;
      continue;
    }
    out.push_back(std::move(row));
  }
  return out;
}

inline std::vector<dsl::Valuation> trace_states(const std::vector<dsl::Trace>& traces) {
  std::vector<dsl::Valuation> out;
  for (const auto& t : traces)
    for (std::size_t i = 0; i < t.size(); ++i) out.push_back(t.row(i));
  return out;
}

// ---------------------------------------------------------------------------
// Exact rank, computed modulo large primes

namespace detail {

inline std::uint64_t mulmod(std::uint64_t a, std::uint64_t b, std::uint64_t p) {
  return static_cast<std::uint64_t>((static_cast<unsigned __int128>(a) * b) % p);
}

inline std::uint64_t powmod(std::uint64_t a, std::uint64_t e, std::uint64_t p) {
  std::uint64_t r = 1;
  while (e) {
    if (e & 1) r = mulmod(r, a, p);
    a = mulmod(a, a, p);
    e >>= 1;
  }
  return r;
}

inline std::uint64_t reduce(const Integer& x, std::uint64_t p) {
  Integer r = x % p;
  if (r < 0) r += p;
  return r.convert_to<std::uint64_t>();
}

inline std::size_t rank_mod(const RationalMatrix& m, const std::vector<std::size_t>& cols, std::uint64_t p) {
  std::vector<std::vector<std::uint64_t>> a;
  for (const auto& row : m) {
    Integer scale = 1;
    for (auto c : cols) scale = lcm(scale, den(row[c]));
    std::vector<std::uint64_t> r;
    for (auto c : cols) r.push_back(reduce(num(row[c]) * (scale / den(row[c])), p));
    a.push_back(std::move(r));
  }
  std::size_t rank = 0;
  for (std::size_t c = 0; c < cols.size() && rank < a.size(); ++c) {
    std::size_t piv = rank;
    while (piv < a.size() && a[piv][c] == 0) ++piv;
    if (piv == a.size()) continue;
    std::swap(a[piv], a[rank]);
    std::uint64_t inv = powmod(a[rank][c], p - 2, p);
    for (std::size_t r = rank + 1; r < a.size(); ++r) {
      if (a[r][c] == 0) continue;
      std::uint64_t f = mulmod(a[r][c], inv, p);
      for (std::size_t k = c; k < cols.size(); ++k) a[r][k] = (a[r][k] + p - mulmod(f, a[rank][k], p)) % p;
    }
    ++rank;
  }
  return rank;
}

}  // namespace detail

/// Column rank of the selected columns over the rationals. Reduction modulo
/// a prime can only lose rank, so the larger of two primes is taken.
inline std::size_t column_rank(const RationalMatrix& m, const std::vector<std::size_t>& cols) {
  if (m.empty() || cols.empty()) return 0;
  constexpr std::uint64_t p1 = 2305843009213693951ULL;  // 2^61 - 1
  constexpr std::uint64_t p2 = 4611686018427387847ULL;  // 2^62 - 57
  return std::max(detail::rank_mod(m, cols, p1), detail::rank_mod(m, cols, p2));
}

inline std::size_t column_rank(const RationalMatrix& m) {
  if (m.empty()) return 0;
  std::vector<std::size_t> cols(m[0].size());
  std::iota(cols.begin(), cols.end(), 0);
  return column_rank(m, cols);
}

/// Whether column j lies in the span of the other columns in `cols`,
/// i.e. it takes part in some exact linear relation of the data.
inline bool in_span_of_others(const RationalMatrix& m, const std::vector<std::size_t>& cols, std::size_t j) {
  std::vector<std::size_t> others;
  for (auto c : cols)
    if (c != j) others.push_back(c);
  std::vector<std::size_t> with = others;
  with.push_back(j);
  return column_rank(m, with) == column_rank(m, others);
}

// ---------------------------------------------------------------------------
// Growth-rate filter

struct GrowthFilterResult {
  std::vector<Term> kept;
  std::vector<Term> removed;
  std::vector<double> rates;  // per input basis term
  std::string warning;
};

/// Log-log growth rate of a column over the second half of a trace.
inline double growth_rate(const std::vector<Rational>& column) {
  const std::size_t n = column.size();
  if (n < 3) return 0.0;
  std::size_t lo = (n - 1) / 2;
  std::size_t hi = n - 1;
  auto mag = [](const Rational& r) { return std::log1p(std::abs(to_double(r))); };
  double dx = std::log1p(static_cast<double>(hi)) - std::log1p(static_cast<double>(lo));
  if (dx <= 0) return 0.0;
  return (mag(column[hi]) - mag(column[lo])) / dx;
}

/// Drops terms that no exact relation of the raw data involves and whose
/// growth along the longest trace either exceeds that of every term some
/// relation involves, or (when there is no relation) that of every product
/// of two other basis terms, by more than `margin`. A term in the span of
/// the other columns of the full raw matrix is never dropped.
inline GrowthFilterResult growth_rate_filter(const std::vector<dsl::Trace>& traces, const std::vector<Term>& basis,
                                             double margin = 0.5) {
  GrowthFilterResult res;
  res.rates.assign(basis.size(), 0.0);
  const dsl::Trace* longest = nullptr;
  for (const auto& t : traces)
    if (!longest || t.size() > longest->size()) longest = &t;
  if (!longest || longest->size() < 3) {
    res.kept = basis;
    res.warning = "growth filter skipped: need a trace with at least 3 rows";
    return res;
  }
  std::vector<dsl::Valuation> rows;
  for (std::size_t i = 0; i < longest->size(); ++i) rows.push_back(longest->row(i));
  for (std::size_t j = 0; j < basis.size(); ++j) {
    std::vector<Rational> col;
    try {
      for (const auto& r : rows) col.push_back(basis[j].eval(r));
      res.rates[j] = growth_rate(col);
    } catch (const EvalError&) {
      res.rates[j] = 0.0;
    }
  }
  RationalMatrix raw = evaluate_terms(basis, trace_states(traces));
  std::vector<std::size_t> all(basis.size());
  std::iota(all.begin(), all.end(), 0);
  // removing a column outside every relation leaves the relations intact,
  // so the protected set can be computed once
  std::vector<bool> protect(basis.size(), false);
  double balanced = -1.0;
  for (auto j : all)
    if (!raw.empty() && in_span_of_others(raw, all, j)) {
      protect[j] = true;
      balanced = std::max(balanced, res.rates[j]);
    }
  std::vector<std::size_t> active = all;
  if (balanced >= 0.0) {
    std::erase_if(active, [&](std::size_t j) { return !protect[j] && res.rates[j] > balanced + margin; });
  } else {
    for (;;) {
      std::size_t best = basis.size();
      for (auto j : active)
        if (best == basis.size() || res.rates[j] > res.rates[best]) best = j;
      if (best == basis.size()) break;
      double bound = 0.0;
      for (auto u : active)
        for (auto v : active)
          if (u != best && v != best) bound = std::max(bound, res.rates[u] + res.rates[v]);
      if (res.rates[best] <= bound + margin) break;
      active.erase(std::find(active.begin(), active.end(), best));
    }
  }
  std::vector<bool> keep(basis.size(), false);
  for (auto j : active) keep[j] = true;
  for (std::size_t j = 0; j < basis.size(); ++j) (keep[j] ? res.kept : res.removed).push_back(basis[j]);
  return res;
}

// ---------------------------------------------------------------------------
// Normalization

struct SampleMatrix {
  std::vector<Term> basis;
  RationalMatrix raw;
  RealMatrix normalized;
  double norm_target = 10.0;
};

/// Scales each row to L2 norm l. A positive per-row factor keeps the sign and
/// zero set of every linear form.
inline RealMatrix normalize_rows(const RationalMatrix& raw, double l) {
  RealMatrix out;
  out.reserve(raw.size());
  for (const auto& row : raw) {
    std::vector<double> r;
    r.reserve(row.size());
    double big = 0.0;
    for (const auto& x : row) {
      r.push_back(to_double(x));
      big = std::max(big, std::abs(r.back()));
    }
    if (big == 0.0) throw Error("cannot normalize an all-zero row");
    double ss = 0.0;
    for (double x : r) ss += (x / big) * (x / big);
    double scale = l / (big * std::sqrt(ss));
    for (double& x : r) x *= scale;
    out.push_back(std::move(r));
  }
  return out;
}

inline SampleMatrix make_sample_matrix(std::vector<Term> basis, RationalMatrix raw, double l = 10.0) {
  SampleMatrix m;
  m.basis = std::move(basis);
  m.normalized = normalize_rows(raw, l);
  m.raw = std::move(raw);
  m.norm_target = l;
  return m;
}

/// Unnormalized real copy, used when normalization is switched off.
inline RealMatrix to_real(const RationalMatrix& raw) {
  RealMatrix out;
  for (const auto& row : raw) {
    std::vector<double> r;
    for (const auto& x : row) r.push_back(to_double(x));
    out.push_back(std::move(r));
  }
  return out;
}

inline std::string matrix_to_csv(const SampleMatrix& m) { return dsl::to_csv(term_names(m.basis), m.raw); }

// ---------------------------------------------------------------------------
// Dropout

struct DropoutMask {
  std::vector<bool> keep;
  std::uint64_t seed = 0;

  std::size_t kept() const { return static_cast<std::size_t>(std::count(keep.begin(), keep.end(), true)); }
};

/// Uniform double in [0, 1) from the top 53 bits, identical on every platform.
inline double unit_uniform(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

/// One mask per literal; each term is kept with probability 1 - p and the
/// constant term is always kept.
inline std::vector<DropoutMask> make_dropout_masks(const std::vector<Term>& basis, double p, std::size_t literal_count,
                                                   std::uint64_t seed) {
  if (p < 0.0 || p >= 1.0) throw ConfigError("dropout probability must lie in [0, 1)");
  std::mt19937_64 rng(seed);
  std::vector<DropoutMask> out;
  for (std::size_t k = 0; k < literal_count; ++k) {
    DropoutMask m;
    m.seed = seed;
    for (const auto& t : basis) m.keep.push_back(t.is_constant() || unit_uniform(rng) >= p);
    out.push_back(std::move(m));
  }
  return out;
}

/// Term subsets for inequality literals: every combination of 1..max_terms
/// non-constant monomials of degree <= max_deg over vars.
inline std::vector<std::vector<Term>> bound_term_subsets(const std::vector<std::string>& vars, int max_terms = 3,
                                                         int max_deg = 2) {
  std::vector<Term> mons = enumerate_terms(vars, max_deg);
  mons.erase(mons.begin());  // constant
  std::vector<std::vector<Term>> out;
  std::vector<std::size_t> pick;
  std::function<void(std::size_t)> rec = [&](std::size_t start) {
    if (!pick.empty()) {
      std::vector<Term> s;
      for (auto i : pick) s.push_back(mons[i]);
      out.push_back(std::move(s));
    }
    if (static_cast<int>(pick.size()) == max_terms) return;
    for (std::size_t i = start; i < mons.size(); ++i) {
      pick.push_back(i);
      rec(i + 1);
      pick.pop_back();
    }
  };
  rec(0);
  std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.size() < b.size(); });
  return out;
}

/// The same subsets as keep-masks over `basis`.
inline std::vector<DropoutMask> bound_masks(const std::vector<Term>& basis, const std::vector<std::string>& vars,
                                            int max_terms = 3, int max_deg = 2) {
  std::vector<DropoutMask> out;
  for (const auto& subset : bound_term_subsets(vars, max_terms, max_deg)) {
    DropoutMask m;
    bool ok = true;
    for (const auto& t : basis) m.keep.push_back(std::find(subset.begin(), subset.end(), t) != subset.end());
    for (const auto& t : subset) ok = ok && std::find(basis.begin(), basis.end(), t) != basis.end();
    if (ok) out.push_back(std::move(m));
  }
  return out;
}

}  // namespace nlinv
