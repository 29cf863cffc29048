#include "nlinv/cegis.hpp"
#include "support.hpp"

#include <gtest/gtest.h>

#include <sstream>

using namespace nlinv;
using namespace nlinv::cegis;

namespace {

bool have_z3() {
  try {
    checker::resolve_solver("z3");
    return true;
  } catch (const SolverUnavailable&) {
    return false;
  }
}

Atom atom(const std::string& s) { return parse_formula(s)->atom; }

std::vector<Candidate> candidates(const std::vector<std::string>& texts, const std::string& origin = "equality") {
  std::vector<Candidate> out;
  for (const auto& t : texts) {
    auto f = parse_formula(t);
    out.push_back({f, to_string(*f), origin});
  }
  return out;
}

bool contains(const std::vector<Candidate>& cs, const std::string& text) {
  auto t = to_string(*parse_formula(text));
  return std::any_of(cs.begin(), cs.end(), [&](const Candidate& c) { return c.text == t; });
}

}  // namespace

TEST(Ladder, DefaultShape) {
  RunConfig cfg;
  auto l = retry_ladder(cfg);
  ASSERT_EQ(l.size(), 10u);
  std::vector<double> rates{0.3, 0.2, 0.1, 0.0, 0.3, 0.2, 0.1, 0.0, 0.3, 0.2};
  for (std::size_t i = 0; i < l.size(); ++i) {
    EXPECT_DOUBLE_EQ(l[i].dropout, rates[i]);
    if (i < 4) EXPECT_FALSE(l[i].frac_step);
    else if (i < 8) EXPECT_EQ(*l[i].frac_step, Rational(1, 2));
    else EXPECT_EQ(*l[i].frac_step, Rational(1, 4));
  }
}

TEST(Ladder, IntegerOnlyCycles) {
  RunConfig cfg;
  cfg.fractional = false;
  cfg.attempts = 6;
  auto l = retry_ladder(cfg);
  ASSERT_EQ(l.size(), 6u);
  EXPECT_DOUBLE_EQ(l[4].dropout, 0.3);
  for (const auto& r : l) EXPECT_FALSE(r.frac_step);
  cfg.attempts = 1;
  EXPECT_EQ(retry_ladder(cfg).size(), 1u);
}

TEST(Learn, InstantiateFrozenTerms) {
  std::map<std::string, nlinv::detail::Poly> init{{"x_0", {{Term::var("n"), 1}, {Term::one(), 1}}}};
  EXPECT_EQ(cegis::detail::instantiate(atom("y - 2*x_0*k == 0"), init), canonical(atom("y == 2*k*n + 2*k")));
  EXPECT_EQ(cegis::detail::instantiate(atom("y - x_0^2 == 0"), init), canonical(atom("y == n^2 + 2*n + 1")));
  EXPECT_EQ(cegis::detail::instantiate(atom("y >= 3"), init), canonical(atom("y >= 3")));
}

TEST(Learn, EliminableVariable) {
  std::vector<std::string> active{"n", "a", "s", "t"}, params{"n"};
  EXPECT_EQ(cegis::detail::eliminable(atom("t == 2*a + 1"), active, params), "t");
  EXPECT_EQ(cegis::detail::eliminable(atom("s == a^2 + 2*a + 1"), active, params), "s");
  EXPECT_EQ(cegis::detail::eliminable(atom("n == a^2"), active, params), "n");
  EXPECT_EQ(cegis::detail::eliminable(atom("n == a*t"), active, params), "n");
  EXPECT_FALSE(cegis::detail::eliminable(atom("a*t == n*s"), active, params));
  EXPECT_FALSE(cegis::detail::eliminable(atom("t >= 2*a"), active, params));
}

TEST(Learn, SamplesAreDeduplicated) {
  auto p = load_benchmark("sqrt1");
  Samples s;
  s.vars = p.variables();
  auto t = dsl::execute_trace(p, {{"n", 10}}, 50);
  EXPECT_EQ(s.add(t), t.size());
  EXPECT_EQ(s.add(t), 0u);
  EXPECT_EQ(s.states.size(), t.size());
}

TEST(Learn, TableOnly) {
  dsl::CsvTable table;
  table.header = {"x", "y"};
  for (int x = -6; x <= 6; ++x) table.rows.push_back({x, x * x + 1});
  RunConfig cfg;
  cfg.learn_bounds = false;
  auto r = learn_only(table, cfg);
  EXPECT_EQ(r.samples, table.rows.size());
  EXPECT_TRUE(contains(r.candidates, "x^2 - y == -1")) << r.to_json().dump();
  for (const auto& c : r.candidates) {
    for (const auto& row : table.rows) EXPECT_TRUE(eval(*c.formula, {{"x", row[0]}, {"y", row[1]}})) << c.text;
  }
}

TEST(Audit, StreamsJsonLines) {
  std::ostringstream os;
  Audit a(&os);
  a.record("train", 2, {{"rows", 5}});
  a.record("check", 2, {{"pool", 1}});
  EXPECT_EQ(a.records().size(), 2u);
  ASSERT_EQ(a.stage("check").size(), 1u);
  std::istringstream in(os.str());
  std::string line;
  std::getline(in, line);
  auto j = json::parse(line);
  EXPECT_EQ(j["stage"], "train");
  EXPECT_EQ(j["round"], 2);
  EXPECT_EQ(j["rows"], 5);
}

TEST(Houdini, ValidPoolNeedsOneQuery) {
  if (!have_z3()) GTEST_SKIP() << "z3 not installed";
  auto p = load_benchmark("sqrt1");
  RunConfig cfg;
  Samples data = initial_samples(p, cfg);
  auto cs = candidates({"t == 2*a + 1", "s == a^2 + 2*a + 1", "a*a <= n"});
  Pool pool;
  for (const auto& c : cs) pool.add(c.formula, c.origin);
  Audit audit;
  std::vector<CounterexampleRecord> cexs;
  auto h = houdini(p, pool.items(), pool, data, cfg, audit, 0, cexs);
  EXPECT_TRUE(h.success);
  EXPECT_EQ(h.verdict, "valid");
  EXPECT_EQ(h.solver_calls, 1u);
  EXPECT_EQ(h.survivors.size(), 3u);
  EXPECT_TRUE(cexs.empty());
}

TEST(Houdini, CounterexamplesPruneThePool) {
  if (!have_z3()) GTEST_SKIP() << "z3 not installed";
  auto p = load_benchmark("sqrt1");
  RunConfig cfg;
  cfg.inputs = 4;
  cfg.input_hi = 9;
  Samples data = initial_samples(p, cfg);
  std::size_t before = data.states.size();
  // both extra candidates hold on small inputs; neither is an invariant
  auto cs = candidates({"t == 2*a + 1", "s == a^2 + 2*a + 1", "a*a <= n", "a <= 3", "n <= 9"});
  for (const auto& c : cs) ASSERT_TRUE(extract::holds_on_states(*c.formula, data.states)) << c.text;
  Pool pool;
  for (const auto& c : cs) pool.add(c.formula, c.origin);
  Audit audit;
  std::vector<CounterexampleRecord> cexs;
  auto h = houdini(p, pool.items(), pool, data, cfg, audit, 0, cexs);
  ASSERT_TRUE(h.success) << h.reason;
  EXPECT_EQ(h.survivors.size(), 3u);
  EXPECT_FALSE(contains(h.survivors, "a <= 3"));
  EXPECT_FALSE(contains(h.survivors, "n <= 9"));
  EXPECT_FALSE(cexs.empty());
  EXPECT_GT(data.states.size(), before);
  EXPECT_GE(audit.stage("check").size(), 2u);
  // the pool lost whatever the new samples refute
  EXPECT_LT(pool.size(), cs.size());
}

TEST(Houdini, WeakPoolFails) {
  if (!have_z3()) GTEST_SKIP() << "z3 not installed";
  auto p = load_benchmark("sqrt1");
  RunConfig cfg;
  Samples data = initial_samples(p, cfg);
  Pool pool;
  pool.add(parse_formula("t == 2*a + 1"), "equality");
  Audit audit;
  std::vector<CounterexampleRecord> cexs;
  auto h = houdini(p, pool.items(), pool, data, cfg, audit, 0, cexs);
  EXPECT_FALSE(h.success);
  EXPECT_EQ(h.verdict, "invalid");
  EXPECT_NE(h.reason.find("too weak"), std::string::npos);
  ASSERT_FALSE(cexs.empty());
  EXPECT_EQ(cexs.back().condition, checker::Condition::Sufficiency);
}

TEST(Houdini, MinimizeDropsRedundantConjuncts) {
  if (!have_z3()) GTEST_SKIP() << "z3 not installed";
  auto p = load_benchmark("sqrt1");
  RunConfig cfg;
  auto inv = candidates({"t == 2*a + 1", "s == a^2 + 2*a + 1"});
  for (auto c : candidates({"a*a <= n", "a >= 0", "t >= 1"}, "bound")) inv.push_back(c);
  Audit audit;
  std::size_t calls = 0;
  auto m = minimize(p, inv, cfg, audit, 0, calls);
  EXPECT_TRUE(proves(p, m, cfg, calls));
  EXPECT_LT(m.size(), inv.size());
  EXPECT_TRUE(contains(m, "a*a <= n"));
  EXPECT_GT(calls, 0u);
}

TEST(Infer, Sqrt1EndToEnd) {
  if (!have_z3()) GTEST_SKIP() << "z3 not installed";
  auto p = load_benchmark("sqrt1");
  RunConfig cfg;
  std::ostringstream log;
  Audit audit(&log);
  auto r = infer(p, cfg, &audit);
  ASSERT_TRUE(r.success) << r.to_json().dump(1);
  EXPECT_EQ(r.verdict, "valid");
  ASSERT_TRUE(r.invariant);
  auto e = checker::check_entailment(*r.invariant, *parse_formula("a*a <= n"), cfg.solver);
  EXPECT_EQ(e.status, checker::Status::Valid) << to_string(*r.invariant);
  auto again = checker::verify({&p, r.invariant}, cfg.solver);
  EXPECT_TRUE(again.valid());
  auto j = r.to_json();
  EXPECT_EQ(j["success"], true);
  EXPECT_FALSE(audit.stage("train").empty());
  EXPECT_FALSE(audit.stage("check").empty());
  EXPECT_FALSE(log.str().empty());
}
