#include "nlinv/features.hpp"
#include "support.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <set>

using namespace nlinv;

namespace {

std::set<std::string> names(const std::vector<Term>& ts) {
  auto v = term_names(ts);
  return {v.begin(), v.end()};
}

std::vector<dsl::Trace> traces_for(const dsl::LoopProgram& p) {
  std::vector<dsl::Trace> out;
  for (const auto& in : dsl::enumerate_inputs(p)) out.push_back(dsl::execute_trace(p, in));
  return out;
}

}  // namespace

TEST(Terms, TenQuadraticTerms) {
  auto ts = enumerate_terms({"x", "y", "z"}, 2);
  EXPECT_EQ(ts.size(), 10u);
  EXPECT_EQ(names(ts), (std::set<std::string>{"1", "x", "y", "z", "x^2", "y^2", "z^2", "x*y", "x*z", "y*z"}));
  EXPECT_EQ(term_names(ts), (std::vector<std::string>{"1", "x", "y", "z", "x^2", "x*y", "x*z", "y^2", "y*z", "z^2"}));
}

TEST(Terms, SmallestBasis) { EXPECT_EQ(term_names(enumerate_terms({"a"}, 1)), (std::vector<std::string>{"1", "a"})); }

TEST(Terms, QuarticOverTwoVariables) {
  auto ts = enumerate_terms({"x", "y"}, 4);
  EXPECT_EQ(ts.size(), 15u);
  auto n = names(ts);
  for (auto s : {"1", "y", "y^2", "y^3", "y^4", "x"}) EXPECT_TRUE(n.count(s)) << s;
}

TEST(Terms, ExternalAndFrozen) {
  std::vector<dsl::ExternalFn> ext{*dsl::find_external("gcd")};
  auto ts = enumerate_terms({"a", "b"}, 1, ext, {"a_0"});
  EXPECT_EQ(term_names(ts), (std::vector<std::string>{"1", "a", "b", "a_0", "gcd(a,b)", "gcd(b,a)"}));
  dsl::Valuation v{{"a", 12}, {"b", 18}, {"a_0", 1}};
  EXPECT_EQ(ts[4].eval(v), Rational(6));
}

TEST(Terms, CountMatchesBinomial) {
  for (int nv = 1; nv <= 4; ++nv)
    for (int d = 1; d <= 5; ++d) {
      std::vector<std::string> vars;
      for (int i = 0; i < nv; ++i) vars.push_back("v" + std::to_string(i));
      // C(nv + d, d)
      double c = 1;
      for (int i = 1; i <= d; ++i) c = c * (nv + i) / i;
      auto ts = enumerate_terms(vars, d);
      EXPECT_EQ(ts.size(), static_cast<std::size_t>(std::lround(c)));
      EXPECT_EQ(names(ts).size(), ts.size());
      for (std::size_t i = 1; i < ts.size(); ++i) EXPECT_LE(ts[i - 1].degree(), ts[i].degree());
    }
}

TEST(Rank, SmallMatrices) {
  RationalMatrix m{{1, 2, 3}, {2, 4, 6}, {1, 0, 1}};
  EXPECT_EQ(column_rank(m), 2u);
  EXPECT_TRUE(in_span_of_others(m, {0, 1, 2}, 2));
  RationalMatrix id{{1, 0}, {0, Rational(1, 3)}};
  EXPECT_EQ(column_rank(id), 2u);
}

TEST(Growth, Ps4KeepsInvariantTerms) {
  auto p = load_benchmark("ps4");
  auto traces = traces_for(p);
  auto basis = enumerate_terms(p.variables(), 4);
  auto res = growth_rate_filter(traces, basis);
  auto kept = names(res.kept);
  for (auto s : {"1", "y", "y^2", "y^3", "y^4", "x"}) EXPECT_TRUE(kept.count(s)) << s;
}

TEST(Growth, ConstantTraceKeepsAll) {
  auto p = dsl::parse_program("int n;\nx = 3; y = 2;\nwhile (n < 0) { x += 1; }\n");
  dsl::Trace t;
  t.columns = {"n", "x", "y"};
  for (int i = 0; i < 6; ++i) t.rows.push_back({-1, 3, 2});
  auto basis = enumerate_terms({"x", "y"}, 3);
  auto res = growth_rate_filter({t}, basis);
  EXPECT_EQ(res.kept.size(), basis.size());
}

TEST(Growth, NoRelationKeepsAll) {
  dsl::Trace t;
  t.columns = {"x"};
  for (int i = 1; i <= 20; ++i) t.rows.push_back({i});
  std::vector<Term> basis{Term::one(), Term::var("x"), Term::var("x", 2)};
  auto raw = evaluate_terms(basis, trace_states({t}));
  EXPECT_EQ(column_rank(raw), 3u);
  EXPECT_EQ(growth_rate_filter({t}, basis).kept.size(), 3u);
}

TEST(Growth, DropsRunawayTerm) {
  dsl::Trace t;
  t.columns = {"i", "z"};
  Rational z = 1;
  for (int i = 0; i < 30; ++i) {
    t.rows.push_back({i, z});
    z *= 3;
  }
  std::vector<Term> basis{Term::one(), Term::var("i"), Term::var("i", 2), Term::var("z")};
  auto res = growth_rate_filter({t}, basis);
  EXPECT_EQ(names(res.removed), (std::set<std::string>{"z"}));
}

TEST(Growth, NeverDropsRelationTerms) {
  // random small instances: a removed column must not be in the span of the kept ones
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 40; ++trial) {
    dsl::Trace t;
    t.columns = {"i", "z", "w"};
    Rational z = 1;
    int base = 2 + static_cast<int>(rng() % 3);
    bool linked = rng() % 2;
    for (int i = 0; i < 25; ++i) {
      Rational w = linked ? Rational(z + i) : Rational(i * i + 1);
      t.rows.push_back({i, z, w});
      z *= base;
    }
    std::vector<Term> basis{Term::one(), Term::var("i"), Term::var("z"), Term::var("w")};
    auto res = growth_rate_filter({t}, basis);
    auto raw = evaluate_terms(basis, trace_states({t}));
    std::vector<std::size_t> all{0, 1, 2, 3};
    for (const auto& r : res.removed) {
      auto j = static_cast<std::size_t>(std::find(basis.begin(), basis.end(), r) - basis.begin());
      EXPECT_FALSE(in_span_of_others(raw, all, j)) << r.name();
    }
    if (linked) EXPECT_TRUE(res.removed.empty());
  }
}

TEST(Growth, TooFewRows) {
  dsl::Trace t;
  t.columns = {"x"};
  t.rows = {{1}, {2}};
  auto res = growth_rate_filter({t}, {Term::one(), Term::var("x")});
  EXPECT_EQ(res.kept.size(), 2u);
  EXPECT_FALSE(res.warning.empty());
}

TEST(Normalize, SqrtFirstRow) {
  auto p = load_benchmark("sqrt1");
  auto basis = enumerate_terms({"a", "s", "t", "n"}, 2);
  auto raw = evaluate_terms(basis, {{{"a", 0}, {"s", 1}, {"t", 1}, {"n", 0}}});
  auto m = make_sample_matrix(basis, raw, 1.0);
  // nonzero terms are 1, s, t, s^2, s*t, t^2: six ones
  for (std::size_t j = 0; j < basis.size(); ++j) {
    double expect = raw[0][j] == 0 ? 0.0 : 1.0 / std::sqrt(6.0);
    EXPECT_NEAR(m.normalized[0][j], expect, 1e-12);
  }
  // with fewer terms the table entry 0.70 appears: 1, s, t, ... only
  auto small = normalize_rows({{1, 0, 1}}, 1.0);
  EXPECT_NEAR(small[0][0], 0.7071, 1e-4);
}

TEST(Normalize, NormAndFixedPoint) {
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<int> d(-1000, 1000);
  for (int k = 0; k < 200; ++k) {
    std::vector<Rational> row{1};
    for (int j = 0; j < 6; ++j) row.push_back(Rational(d(rng), 1 + std::abs(d(rng)) % 7));
    auto n = normalize_rows({row}, 10.0)[0];
    double ss = 0;
    for (double x : n) ss += x * x;
    EXPECT_NEAR(std::sqrt(ss), 10.0, 1e-9 * 10.0);
  }
  auto fixed = normalize_rows({{6, 8}}, 10.0)[0];
  EXPECT_DOUBLE_EQ(fixed[0], 6.0);
  EXPECT_DOUBLE_EQ(fixed[1], 8.0);
}

TEST(Normalize, ZeroSetsPreserved) {
  // 2*t1 - t2 = 0 stays zero after scaling
  auto n = normalize_rows({{1, 3, 6}, {1, 5, 10}}, 10.0);
  for (const auto& r : n) EXPECT_NEAR(2 * r[1] - r[2], 0.0, 1e-12);
}

TEST(Dropout, NoDropoutKeepsAll) {
  auto basis = enumerate_terms({"x", "y"}, 2);
  for (const auto& m : make_dropout_masks(basis, 0.0, 10, 1)) EXPECT_EQ(m.kept(), basis.size());
}

TEST(Dropout, Deterministic) {
  auto basis = enumerate_terms({"x", "y", "z"}, 2);
  auto a = make_dropout_masks(basis, 0.3, 20, 42);
  auto b = make_dropout_masks(basis, 0.3, 20, 42);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].keep, b[i].keep);
  for (const auto& m : a) EXPECT_TRUE(m.keep[0]);
}

TEST(Dropout, KeptCountMatchesBinomial) {
  auto basis = enumerate_terms({"x", "y", "z"}, 1);
  basis.push_back(Term::var("x", 2));
  basis.push_back(Term::var("y", 2));
  basis.push_back(Term::var("z", 2));
  ASSERT_EQ(basis.size(), 7u);
  double total = 0;
  const int seeds = 10000;
  const int literals = 20;
  for (int s = 0; s < seeds; ++s)
    for (const auto& m : make_dropout_masks(basis, 0.3, literals, static_cast<std::uint64_t>(s))) total += m.kept();
  double n = static_cast<double>(seeds) * literals;
  double mean = total / n;
  double expect = 0.7 * 6 + 1;
  double sigma = std::sqrt(6 * 0.7 * 0.3 / n);
  EXPECT_NEAR(mean, expect, 3 * sigma);
}

TEST(Dropout, BoundSubsets) {
  auto subsets = bound_term_subsets({"a", "n"}, 3, 2);
  // 5 monomials: C(5,1) + C(5,2) + C(5,3)
  EXPECT_EQ(subsets.size(), 25u);
  auto basis = enumerate_terms({"a", "n"}, 2);
  auto masks = bound_masks(basis, {"a", "n"});
  EXPECT_EQ(masks.size(), 25u);
  for (const auto& m : masks) {
    EXPECT_FALSE(m.keep[0]);
    EXPECT_GE(m.kept(), 1u);
    EXPECT_LE(m.kept(), 3u);
  }
}

TEST(Csv, MatrixHeader) {
  std::vector<Term> basis{Term::one(), Term::var("a"), Term::var("t"), Term::monomial({{"a", 1}, {"s", 1}}),
                          Term::var("t", 2), Term::monomial({{"t", 1}, {"s", 1}})};
  auto m = make_sample_matrix(basis, {{1, 0, 1, 0, 1, 1}});
  auto csv = matrix_to_csv(m);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "1,a,t,a*s,t^2,s*t");
}
