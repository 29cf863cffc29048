#include "nlinv/config.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

using namespace nlinv;

TEST(Config, DefaultsAreValid) {
  RunConfig c;
  EXPECT_NO_THROW(c.validate());
  EXPECT_EQ(c.clauses, 10u);
  EXPECT_EQ(c.literals, 2u);
  EXPECT_DOUBLE_EQ(c.train.lr, 0.01);
  EXPECT_DOUBLE_EQ(c.train.lr_decay, 0.9996);
  EXPECT_EQ(c.train.max_epochs, 5000u);
  EXPECT_DOUBLE_EQ(c.relax.sigma, 0.1);
  EXPECT_DOUBLE_EQ(c.gate_threshold, 0.5);
  EXPECT_EQ(c.rational.max_denominators, (std::vector<int>{10, 15, 30}));
  EXPECT_EQ(c.dropout, (std::vector<double>{0.3, 0.2, 0.1, 0.0}));
}

TEST(Config, TextRoundTrip) {
  RunConfig a;
  a.max_deg = 4;
  a.train.lr = 0.025;
  a.dropout = {0.5, 0.25};
  a.frac_steps = {Rational(1, 3)};
  a.solver.gcd = checker::GcdMode::Axiomatized;
  a.solver.path = "/opt/z3/bin/z3";
  a.learn_bounds = false;
  RunConfig b;
  load_config_text(b, a.to_text());
  EXPECT_EQ(b.to_text(), a.to_text());
  EXPECT_EQ(b.to_json(), a.to_json());
  EXPECT_EQ(b.frac_steps.front(), Rational(1, 3));
  EXPECT_EQ(b.solver.gcd, checker::GcdMode::Axiomatized);
}

TEST(Config, PartialOverrides) {
  RunConfig c;
  load_config_text(c, "# tweaks\n[train]\nlr = 0.5   # fast\n\n[cegis]\nattempts = 3\n[solver]\npath = \"my z3\"\n");
  EXPECT_DOUBLE_EQ(c.train.lr, 0.5);
  EXPECT_EQ(c.attempts, 3u);
  EXPECT_EQ(c.solver.path, "my z3");
  EXPECT_EQ(c.clauses, 10u);
}

TEST(Config, Errors) {
  RunConfig c;
  EXPECT_THROW(load_config_text(c, "[train]\nlearning_rate = 1\n"), ParseError);
  EXPECT_THROW(load_config_text(c, "lr = 1\n"), ParseError);
  EXPECT_THROW(load_config_text(c, "[train\nlr = 1\n"), ParseError);
  EXPECT_THROW(load_config_text(c, "[train]\nlr\n"), ParseError);
  EXPECT_THROW(load_config_text(c, "[train]\nlr = fast\n"), ParseError);
  EXPECT_THROW(load_config_text(c, "[cegis]\nattempts = -2\n"), ParseError);
  EXPECT_THROW(load_config_text(c, "[model]\ngated = maybe\n"), ParseError);
  EXPECT_THROW(load_config_text(c, "[solver]\ngcd = sometimes\n"), ParseError);
  try {
    load_config_text(c, "\n\n[bounds]\nsize = 3\n");
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("bounds.size"), std::string::npos);
  }
}

TEST(Config, Validation) {
  auto bad = [](auto tweak) {
    RunConfig c;
    tweak(c);
    EXPECT_THROW(c.validate(), ConfigError);
  };
  bad([](RunConfig& c) { c.dropout = {1.0}; });
  bad([](RunConfig& c) { c.dropout.clear(); });
  bad([](RunConfig& c) { c.gate_threshold = 0; });
  bad([](RunConfig& c) { c.attempts = 0; });
  bad([](RunConfig& c) { c.frac_steps = {Rational(0)}; });
  bad([](RunConfig& c) { c.input_lo = 5, c.input_hi = 4; });
  bad([](RunConfig& c) { c.rational.max_denominators = {10, 5}; });
  bad([](RunConfig& c) { c.relax.sigma = 0; });
}

TEST(Config, FileLoading) {
  auto path = std::filesystem::temp_directory_path() / "nlinv_test_config.ini";
  {
    std::ofstream f(path);
    f << "[data]\ninputs = 7\n";
  }
  EXPECT_EQ(load_config_file(path.string()).inputs, 7u);
  {
    std::ofstream f(path);
    f << "[ladder]\ndropout = 2\n";
  }
  EXPECT_THROW(load_config_file(path.string()), ConfigError);
  std::filesystem::remove(path);
  EXPECT_THROW(load_config_file(path.string()), Error);
}
