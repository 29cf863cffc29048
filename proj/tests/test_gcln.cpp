#include "nlinv/gcln.hpp"
#include "oracles.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

using namespace nlinv;
using namespace nlinv::gcln;

namespace {

DropoutMask all_keep(std::size_t b) { return DropoutMask{std::vector<bool>(b, true), 0}; }

GclnModel tiny_model(std::size_t m, std::size_t n, std::size_t b, std::uint64_t seed,
                     std::vector<Activation> kinds = {}) {
  if (kinds.empty()) {
    Activation cycle[] = {Activation::Equality, Activation::GreaterEq, Activation::LessEq};
    for (std::size_t i = 0; i < m * n; ++i) kinds.push_back(cycle[i % 3]);
  }
  std::vector<DropoutMask> masks(m * n, all_keep(b));
  return make_model(b, m, n, kinds, masks, RelaxationConfig{}, seed);
}

// Literal whose weights are given over terms (1, x, y, z).
void set_literal(Literal& lit, std::vector<double> w) {
  lit.w = std::move(w);
  lit.b = 0.0;
  lit.kind = Activation::Equality;
  lit.mask = all_keep(lit.w.size());
}

}  // namespace

TEST(Forward, AllGatesClosed) {
  auto model = tiny_model(3, 2, 4, 1);
  std::fill(model.g_and.begin(), model.g_and.end(), 0.0);
  std::fill(model.g_or.begin(), model.g_or.end(), 0.0);
  std::vector<double> row{1, 2, 3, 4};
  EXPECT_DOUBLE_EQ(forward(model, row), 1.0);
}

TEST(Forward, SingleEqualityOnHyperplane) {
  auto model = tiny_model(1, 1, 3, 2, {Activation::Equality});
  model.literals[0].w = {0.6, -0.8, 0.0};
  model.literals[0].b = 0.0;
  model.g_and = {1.0};
  model.g_or = {1.0};
  std::vector<double> row{4, 3, 17};
  EXPECT_DOUBLE_EQ(forward(model, row), 1.0);
}

TEST(Forward, TwoLevelFormula) {
  // (3y - 3z - 2 = 0) and ((x - 3z = 0) or (x + y + z = 0)) over terms (1, x, y, z)
  GclnModel model = tiny_model(2, 2, 4, 3);
  set_literal(model.literal(0, 0), {-2, 0, 3, -3});
  set_literal(model.literal(0, 1), {1, 1, 1, 1});
  set_literal(model.literal(1, 0), {0, 1, 0, -3});
  set_literal(model.literal(1, 1), {0, 1, 1, 1});
  model.g_or = {1, 0, 1, 1};
  model.g_and = {1, 1};
  // z = 1, y = 5/3, x = 3
  std::vector<double> on{1, 3, 5.0 / 3.0, 1};
  EXPECT_NEAR(forward(model, on), 1.0, 1e-12);
  std::vector<double> off{1, 2, 5.0 / 3.0, 1};
  EXPECT_LT(forward(model, off), 1e-3);
}

TEST(Loss, Examples) {
  auto model = tiny_model(2, 2, 3, 4);
  std::fill(model.g_and.begin(), model.g_and.end(), 0.0);
  std::fill(model.g_or.begin(), model.g_or.end(), 0.0);
  RealMatrix X{{1, 2, 3}, {0, 1, 0}};
  // output is 1 everywhere; only the AND-gate term remains
  EXPECT_DOUBLE_EQ(loss(model, X, {0.5, 0.25}), 0.5 * 2);
  std::fill(model.g_and.begin(), model.g_and.end(), 1.0);
  for (auto& lit : model.literals) {
    lit.w = {0, 0, 0};
    lit.kind = Activation::Equality;
  }
  model.g_or = {1, 0, 1, 0};
  EXPECT_NEAR(loss(model, X, {1.0, 1.0}), 0.0 + 2.0, 1e-12);
  EXPECT_NEAR(loss(model, X, {0.0, 0.0}), 0.0, 1e-12);
  // one row with output 0.6
  auto one = tiny_model(1, 1, 1, 5, {Activation::Equality});
  one.g_and = {1};
  one.g_or = {1};
  one.literals[0].w = {1};
  one.cfg.sigma = 1.0;
  double d = std::sqrt(-2.0 * std::log(0.6));
  EXPECT_NEAR(loss(one, RealMatrix{{d}}, {0, 0}), 0.4, 1e-12);
}

TEST(Gradients, MatchFiniteDifferences) {
  std::mt19937_64 rng(99);
  std::uniform_real_distribution<double> u(-2, 2), g(0.05, 0.95);
  const double h = 1e-6;
  int checked = 0;
  for (int trial = 0; trial < 100; ++trial) {
    auto model = tiny_model(2, 2, 3, 100 + trial);
    for (auto& lit : model.literals) lit.b = u(rng);
    for (auto& x : model.g_or) x = g(rng);
    for (auto& x : model.g_and) x = g(rng);
    model.cfg.sigma = 0.7;
    RealMatrix X;
    for (int r = 0; r < 4; ++r) X.push_back({1.0, u(rng), u(rng)});
    Lambdas lam{0.3, 0.2};
    // stay away from the inequality breakpoints
    bool near_break = false;
    for (const auto& row : X)
      for (const auto& lit : model.literals)
        if (lit.kind != Activation::Equality && std::abs(lit.residual(row)) < 1e-3) near_break = true;
    if (near_break) continue;
    std::vector<double> grad;
    loss_and_grad(model, X, lam, model.cfg, grad);
    auto p = flatten(model);
    for (std::size_t i = 0; i < p.size(); ++i) {
      auto q = p;
      q[i] += h;
      GclnModel a = model;
      unflatten(a, q);
      q[i] -= 2 * h;
      GclnModel b = model;
      unflatten(b, q);
      double fd = (loss(a, X, lam) - loss(b, X, lam)) / (2 * h);
      EXPECT_LE(std::abs(grad[i] - fd), 1e-4 * std::max(std::abs(grad[i]), std::abs(fd)) + 1e-8)
          << "param " << i << " trial " << trial;
      ++checked;
    }
  }
  EXPECT_GT(checked, 1000);
}

TEST(Gradients, MaskedAndFrozen) {
  auto model = tiny_model(1, 2, 3, 7);
  model.literals[0].mask.keep = {true, false, true};
  model.literals[0].w[1] = 0.0;
  model.literals[1].train_bias = false;
  RealMatrix X{{1, 2, 3}, {1, -1, 0.5}};
  std::vector<double> grad;
  loss_and_grad(model, X, {0.1, 0.1}, model.cfg, grad);
  EXPECT_EQ(grad[1], 0.0);
  EXPECT_EQ(grad[4 + 3], 0.0);
  freeze_gates(model);
  loss_and_grad(model, X, {0.1, 0.1}, model.cfg, grad);
  for (std::size_t i = 8; i < grad.size(); ++i) EXPECT_EQ(grad[i], 0.0);
}

TEST(WeightProject, Cases) {
  std::vector<double> w{3, 4};
  EXPECT_TRUE(weight_project(w));
  EXPECT_DOUBLE_EQ(w[0], 0.6);
  EXPECT_DOUBLE_EQ(w[1], 0.8);
  auto before = w;
  weight_project(w);
  EXPECT_NEAR(w[0], before[0], 1e-15);
  std::vector<double> z{0, 0};
  EXPECT_FALSE(weight_project(z));
}

TEST(Train, ZeroWeightsReinitialized) {
  auto model = tiny_model(1, 1, 2, 8, {Activation::Equality});
  model.literals[0].w = {0, 0};
  TrainConfig tc;
  tc.max_epochs = 3;
  auto rep = train(model, RealMatrix{{1, 1}}, tc);
  ASSERT_FALSE(rep.reinitialized.empty());
  EXPECT_EQ(rep.reinitialized[0], 0u);
  double ss = model.literals[0].w[0] * model.literals[0].w[0] + model.literals[0].w[1] * model.literals[0].w[1];
  EXPECT_NEAR(ss, 1.0, 1e-12);
}

TEST(Train, LearnsHyperplane) {
  // rows (1, x, y) normalized, all on y = 2x + 1
  RationalMatrix raw;
  for (int x = -5; x <= 5; ++x) raw.push_back({1, x, 2 * x + 1});
  auto X = normalize_rows(raw, 10.0);
  auto model = make_model(3, 1, 1, {Activation::Equality}, {all_keep(3)}, RelaxationConfig{}, 11);
  model.literals[0].train_bias = false;
  TrainConfig tc;
  tc.seed = 11;
  tc.sigma_start = 10.0;
  tc.sigma_anneal_epochs = 1500;
  tc.max_epochs = 3000;
  auto rep = train(model, X, tc);
  EXPECT_GT(model.g_and[0], 0.9);
  for (const auto& row : X) EXPECT_LT(std::abs(model.literals[0].residual(row)), model.cfg.sigma / 10);
  EXPECT_LT(rep.final_loss, rep.initial_loss);
  double ss = 0;
  for (double w : model.literals[0].w) ss += w * w;
  EXPECT_NEAR(ss, 1.0, 1e-6);
}

TEST(Train, DeadClauseIsGatedOff) {
  // clause 0 keeps the relation's terms, clause 1 only sees the constant
  RationalMatrix raw;
  for (int x = -5; x <= 5; ++x) raw.push_back({1, x, 2 * x + 1});
  auto X = normalize_rows(raw, 10.0);
  DropoutMask only_const{{true, false, false}, 0};
  auto model = make_model(3, 2, 1, {Activation::Equality, Activation::Equality}, {all_keep(3), only_const},
                          RelaxationConfig{}, 12);
  for (auto& l : model.literals) l.train_bias = false;
  TrainConfig tc;
  tc.seed = 12;
  tc.sigma_start = 10.0;
  tc.sigma_anneal_epochs = 1500;
  tc.max_epochs = 3000;
  train(model, X, tc);
  EXPECT_GT(model.g_and[0], 0.9);
  EXPECT_LT(model.g_and[1], 0.1);
  EXPECT_EQ(model.literals[1].w[1], 0.0);
  EXPECT_EQ(model.literals[1].w[2], 0.0);
}

TEST(Train, NonFiniteLossAborts) {
  auto model = tiny_model(1, 1, 2, 9, {Activation::Equality});
  TrainConfig tc;
  tc.max_epochs = 5;
  RealMatrix X{{std::nan(""), 1.0}};
  EXPECT_THROW(train(model, X, tc), TrainingError);
}

TEST(Train, ReportJson) {
  auto model = tiny_model(1, 2, 2, 10);
  TrainConfig tc;
  tc.max_epochs = 10;
  auto rep = train(model, RealMatrix{{1, 0.5}, {1, -0.5}}, tc);
  auto j = rep.to_json();
  EXPECT_EQ(j["epochs"], 10);
  EXPECT_EQ(j["literals"].size(), 2u);
  EXPECT_TRUE(j.contains("g_and"));
}

TEST(Schedules, MoveTowardBounds) {
  TrainConfig tc;
  double l1 = tc.lambda1.init, l2 = tc.lambda2.init;
  for (int e = 0; e < 10000; ++e) {
    double n1 = tc.lambda1.next(l1), n2 = tc.lambda2.next(l2);
    EXPECT_LE(n1, l1);
    EXPECT_GE(n2, l2);
    l1 = n1;
    l2 = n2;
  }
  EXPECT_DOUBLE_EQ(l1, 0.1);
  EXPECT_DOUBLE_EQ(l2, 0.1);
}

TEST(Properties, SingleBoundIsTight) {
  auto t = oracles::bound_tightness(8, 21);
  EXPECT_TRUE(t.ok()) << t.first_failure;
}

TEST(Properties, ModelGradientsMatchDifferences) {
  auto t = oracles::model_gradients(300, 22);
  EXPECT_TRUE(t.ok()) << t.failures << " of " << t.checks << ", first: " << t.first_failure;
}

TEST(Properties, NormalizationKeepsSigns) {
  auto t = oracles::normalization_signs(2000, 23);
  EXPECT_TRUE(t.ok()) << t.failures << " of " << t.checks << ", first: " << t.first_failure;
}
