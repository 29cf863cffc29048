// nlinv: nonlinear loop invariant inference from the command line.

#include "nlinv/cegis.hpp"
#include "nlinv/harness.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iomanip>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <thread>
#include <vector>

namespace {

using namespace nlinv;
using nlohmann::json;

enum Exit { kOk = 0, kOther = 1, kNotFound = 2, kNoSolver = 3 };

struct Common {
  std::string config;
  std::optional<int> max_deg;
  std::vector<double> dropout;
  std::optional<std::uint64_t> seed;
  std::string solver;
  std::vector<std::string> frac_step;
  std::optional<double> timeout;
  std::optional<std::size_t> attempts;
  bool json = false;

  void add_to(CLI::App* app) {
    app->add_option("--config", config, "Settings file (sectioned key = value)");
    app->add_option("--max-deg", max_deg, "Maximum monomial degree");
    app->add_option("--dropout", dropout, "Dropout rates of the retry ladder")->delimiter(',');
    app->add_option("--seed", seed, "Random seed");
    app->add_option("--solver", solver, "Solver binary");
    app->add_option("--frac-step", frac_step, "Fractional sampling grid steps, e.g. 1/2")->delimiter(',');
    app->add_option("--timeout", timeout, "Solver timeout per query in seconds");
    app->add_option("--attempts", attempts, "Attempt budget");
    app->add_flag("--json", json, "Print JSON instead of text");
  }

  RunConfig build() const {
    RunConfig c = config.empty() ? RunConfig{} : load_config_file(config);
    if (max_deg) c.max_deg = *max_deg;
    if (!dropout.empty()) c.dropout = dropout;
    if (seed) c.seed = *seed;
    if (!solver.empty()) c.solver.path = solver;
    if (!frac_step.empty()) {
      c.frac_steps.clear();
      for (const auto& s : frac_step) {
        try {
          c.frac_steps.push_back(parse_rational(s));
        } catch (const std::exception&) {
          throw ConfigError("--frac-step: not a rational number: '" + s + "'");
        }
      }
      c.fractional = true;
    }
    if (timeout) c.solver.timeout_seconds = *timeout;
    if (attempts) c.attempts = *attempts;
    c.validate();
    return c;
  }
};

bool is_csv(const std::string& path) { return std::filesystem::path(path).extension() == ".csv"; }

std::string trace_csv(const dsl::LoopProgram& prog, const RunConfig& cfg) {
  auto data = cegis::initial_samples(prog, cfg);
  std::vector<std::vector<Rational>> rows;
  for (const auto& s : data.states) {
    std::vector<Rational> r;
    for (const auto& v : data.vars) r.push_back(dsl::lookup(s, v));
    rows.push_back(std::move(r));
  }
  return dsl::to_csv(data.vars, rows);
}

int run_infer(const std::string& path, const Common& o, bool trace_only, const std::string& audit_path) {
  RunConfig cfg = o.build();
  std::unique_ptr<std::ofstream> audit_out;
  if (!audit_path.empty()) {
    audit_out = std::make_unique<std::ofstream>(audit_path);
    if (!*audit_out) throw Error("cannot write '" + audit_path + "'");
  }
  cegis::Audit audit(audit_out.get());

  if (is_csv(path)) {
    auto table = dsl::parse_csv(harness::read_text(path));
    auto r = cegis::learn_only(table, cfg, &audit);
    if (o.json) std::cout << r.to_json().dump(2) << "\n";
    else std::cout << to_string(*r.formula()) << "\n";
    return r.candidates.empty() ? kNotFound : kOk;
  }
  auto prog = harness::load_program(path);
  if (trace_only) {
    std::cout << trace_csv(prog, cfg);
    return kOk;
  }
  auto r = cegis::infer(prog, cfg, &audit);
  if (o.json) {
    std::cout << r.to_json().dump(2) << "\n";
  } else if (r.success) {
    std::cout << to_string(*r.invariant) << "\n"
              << "verdict " << r.verdict << ", " << r.attempts.size() << " attempt(s), " << r.solver_calls
              << " solver calls, " << std::fixed << std::setprecision(1) << r.seconds << " s\n";
  } else {
    std::cout << "no invariant found: " << r.failure_reason << "\n";
    if (r.best_candidate) std::cout << "best candidate: " << to_string(*r.best_candidate) << "\n";
  }
  return r.success ? kOk : kNotFound;
}

int run_bench(const std::string& dir, const Common& o, std::size_t workers, const std::vector<std::string>& ablate) {
  RunConfig base = o.build();
  auto files = harness::corpus(dir);
  json all = json::object();
  auto sweep = [&](const std::string& label, const RunConfig& cfg) {
    auto rows = harness::bench(files, cfg, workers);
    if (o.json) {
      json j = json::array();
      for (const auto& r : rows) j.push_back(r.to_json());
      all[label] = j;
    } else {
      std::cout << "== " << label << "\n" << harness::render_table(rows) << "\n";
    }
  };
  sweep("full", base);
  for (const auto& a : ablate) {
    RunConfig c = base;
    harness::apply_ablation(c, a);
    sweep("without " + a, c);
  }
  if (o.json) std::cout << all.dump(2) << "\n";
  return kOk;
}

int run_stability(const std::string& path, const Common& o, std::size_t runs, std::vector<std::uint64_t> seeds,
                  std::size_t workers, bool baseline) {
  RunConfig cfg = o.build();
  if (seeds.empty()) seeds = harness::default_seeds(runs);
  auto prog = harness::load_program(path);
  auto rep = harness::stability(prog, cfg, seeds, workers);
  std::optional<harness::StabilityReport> base;
  if (baseline) base = harness::stability(prog, harness::ungated(cfg), seeds, workers);
  if (o.json) {
    json j{{"gated", rep.to_json()}};
    if (base) j["ungated"] = base->to_json();
    std::cout << j.dump(2) << "\n";
  } else {
    auto line = [](const char* label, const harness::StabilityReport& r) {
      std::cout << label << std::fixed << std::setprecision(2) << r.rate() << " (";
      for (std::size_t i = 0; i < r.seeds.size(); ++i) std::cout << (r.converged[i] ? '+' : '-');
      std::cout << ")\n";
    };
    std::cout << prog.name << " over " << seeds.size() << " seeds\n";
    line("gated:   ", rep);
    if (base) line("ungated: ", *base);
  }
  return kOk;
}

int run_check(const std::string& path, const std::string& invariant, const Common& o) {
  RunConfig cfg = o.build();
  auto prog = harness::load_program(path);
  auto inv = parse_formula(invariant);
  auto out = checker::verify({&prog, inv}, cfg.solver);
  bool ok = out.valid() || out.valid_modulo_gcd();
  if (o.json) {
    std::cout << out.to_json().dump(2) << "\n";
  } else {
    std::cout << out.verdict() << "\n";
    for (const auto& r : out.results) {
      std::cout << "  " << checker::condition_name(r.condition) << ": " << checker::status_name(r.status);
      if (r.status == checker::Status::Counterexample) std::cout << " " << cegis::valuation_json(r.counterexample).dump();
      if (!r.reason.empty()) std::cout << " (" << r.reason << ")";
      std::cout << "\n";
    }
  }
  return ok ? kOk : kNotFound;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Nonlinear loop invariant inference"};
  app.require_subcommand(1);
  std::size_t hw = std::max(1u, std::thread::hardware_concurrency() / 4);

  Common o;
  std::string file, audit_path, invariant;
  bool trace_only = false;
  auto* infer = app.add_subcommand("infer", "Infer an invariant for a .loop program, or candidates for a CSV table");
  infer->add_option("file", file, "Program (.loop) or trace table (.csv)")->required();
  infer->add_flag("--trace-only", trace_only, "Print the sampled states as CSV and stop");
  infer->add_option("--audit", audit_path, "Write the per-stage audit log (JSON lines) here");
  o.add_to(infer);

  std::string dir;
  std::size_t workers = hw;
  std::vector<std::string> ablate;
  auto* bench = app.add_subcommand("bench", "Run every .loop file in a directory");
  bench->add_option("dir", dir, "Corpus directory")->required();
  bench->add_option("--workers", workers, "Parallel problem runs");
  bench->add_option("--ablate", ablate, "Also run with a component off")
      ->delimiter(',')
      ->check(CLI::IsMember({"normalization", "regularization", "dropout", "frac", "gates"}));
  o.add_to(bench);

  std::size_t runs = 20;
  std::vector<std::uint64_t> seeds;
  bool baseline = false;
  auto* stab = app.add_subcommand("stability", "Convergence rate over seeded runs");
  stab->add_option("file", file, "Program (.loop)")->required();
  stab->add_option("--runs", runs, "Number of runs (seeds 1..runs)")->check(CLI::PositiveNumber);
  stab->add_option("--seeds", seeds, "Explicit seed list")->delimiter(',');
  stab->add_option("--workers", workers, "Parallel runs");
  stab->add_flag("--baseline", baseline, "Also run the ungated model on the same seeds");
  o.add_to(stab);

  auto* trace = app.add_subcommand("trace", "Print sampled program states as CSV");
  trace->add_option("file", file, "Program (.loop)")->required();
  o.add_to(trace);

  auto* check = app.add_subcommand("check", "Verify a given invariant against a program");
  check->add_option("file", file, "Program (.loop)")->required();
  check->add_option("invariant", invariant, "Invariant, e.g. \"a*a <= n && t == 2*a + 1\"")->required();
  o.add_to(check);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*infer) return run_infer(file, o, trace_only, audit_path);
    if (*bench) return run_bench(dir, o, workers, ablate);
    if (*stab) return run_stability(file, o, runs, seeds, workers, baseline);
    if (*trace) {
      std::cout << trace_csv(harness::load_program(file), o.build());
      return kOk;
    }
    if (*check) return run_check(file, invariant, o);
  } catch (const SolverUnavailable& e) {
    std::cerr << "nlinv: " << e.what() << "\n";
    return kNoSolver;
  } catch (const std::exception& e) {
    std::cerr << "nlinv: " << e.what() << "\n";
    return kOther;
  }
  return kOther;
}
