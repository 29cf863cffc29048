#pragma once

// Benchmark sweeps and seeded stability runs on top of the inference loop.
// Both fan out one problem-run per worker thread.

#include "nlinv/cegis.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <atomic>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

namespace nlinv::harness {

using json = nlohmann::json;

/// Calls fn(i) for i in [0, n) on up to `workers` threads.
inline void parallel_for(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& fn) {
  workers = std::max<std::size_t>(1, std::min(workers, n));
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w)
    pool.emplace_back([&] {
      for (std::size_t i; (i = next++) < n;) fn(i);
    });
  for (auto& t : pool) t.join();
}

inline std::string read_text(const std::filesystem::path& p) {
  std::ifstream in(p);
  if (!in) throw Error("cannot read '" + p.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline dsl::LoopProgram load_program(const std::filesystem::path& p) {
  return dsl::parse_program(read_text(p), p.stem().string());
}

/// Switches off one component by name: normalization, regularization,
/// dropout, frac or gates.
inline void apply_ablation(RunConfig& cfg, const std::string& what) {
  if (what == "normalization") cfg.normalize = false;
  else if (what == "regularization") cfg.weight_projection = false;
  else if (what == "dropout") cfg.dropout = {0.0};
  else if (what == "frac") cfg.fractional = false;
  else if (what == "gates") cfg.gated = false;
  else throw ConfigError("unknown ablation '" + what + "'");
}

// ---------------------------------------------------------------------------
// Benchmark sweep

struct BenchRow {
  std::string problem;
  bool success = false;
  std::string verdict;
  std::string invariant;
  std::string error;
  std::size_t attempts = 0;
  double seconds = 0;

  json to_json() const {
    json j{{"problem", problem}, {"success", success}, {"verdict", verdict},
           {"attempts", attempts}, {"seconds", seconds}};
    if (!invariant.empty()) j["invariant"] = invariant;
    if (!error.empty()) j["error"] = error;
    return j;
  }
};

inline std::vector<std::filesystem::path> corpus(const std::filesystem::path& dir) {
  std::vector<std::filesystem::path> out;
  if (!std::filesystem::is_directory(dir)) throw Error("'" + dir.string() + "' is not a directory");
  for (const auto& e : std::filesystem::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".loop") out.push_back(e.path());
  std::sort(out.begin(), out.end());
  return out;
}

/// Runs inference on every file. A failing problem never stops the sweep.
inline std::vector<BenchRow> bench(const std::vector<std::filesystem::path>& files, const RunConfig& cfg,
                                   std::size_t workers) {
  std::vector<BenchRow> rows(files.size());
  parallel_for(files.size(), workers, [&](std::size_t i) {
    BenchRow& r = rows[i];
    r.problem = files[i].stem().string();
    try {
      auto prog = load_program(files[i]);
      auto res = cegis::infer(prog, cfg);
      r.success = res.success;
      r.verdict = res.verdict;
      r.attempts = res.attempts.size();
      r.seconds = res.seconds;
      if (res.invariant) r.invariant = to_string(*res.invariant);
      else r.error = res.failure_reason;
    } catch (const std::exception& e) {
      r.verdict = "error";
      r.error = e.what();
    }
  });
  return rows;
}

inline std::string render_table(const std::vector<BenchRow>& rows) {
  std::size_t w = 7;
  for (const auto& r : rows) w = std::max(w, r.problem.size());
  std::ostringstream os;
  os << std::left << std::setw(static_cast<int>(w)) << "problem" << "  solved  " << std::setw(16) << "verdict"
     << std::right << std::setw(9) << "time (s)" << "  invariant\n";
  std::size_t solved = 0;
  double total = 0;
  for (const auto& r : rows) {
    solved += r.success;
    total += r.seconds;
    os << std::left << std::setw(static_cast<int>(w)) << r.problem << "  " << (r.success ? "yes   " : "no    ")
       << "  " << std::setw(16) << r.verdict << std::right << std::setw(9) << std::fixed << std::setprecision(1)
       << r.seconds << "  " << (r.success ? r.invariant : r.error) << "\n";
  }
  os << solved << " of " << rows.size() << " solved";
  if (!rows.empty()) os << ", mean " << std::fixed << std::setprecision(1) << total / rows.size() << " s";
  os << "\n";
  return os.str();
}

// ---------------------------------------------------------------------------
// Stability

struct StabilityReport {
  std::string problem;
  std::vector<std::uint64_t> seeds;
  std::vector<bool> converged;
  std::vector<double> seconds;

  double rate() const {
    if (seeds.empty()) return 0.0;
    return static_cast<double>(std::count(converged.begin(), converged.end(), true)) / seeds.size();
  }

  json to_json() const {
    json runs = json::array();
    for (std::size_t i = 0; i < seeds.size(); ++i)
      runs.push_back({{"seed", seeds[i]}, {"converged", static_cast<bool>(converged[i])}, {"seconds", seconds[i]}});
    return {{"problem", problem}, {"rate", rate()}, {"runs", runs}};
  }
};

inline std::vector<std::uint64_t> default_seeds(std::size_t runs) {
  std::vector<std::uint64_t> s(runs);
  for (std::size_t i = 0; i < runs; ++i) s[i] = i + 1;
  return s;
}

/// One inference run per seed; the rate counts runs that end valid.
inline StabilityReport stability(const dsl::LoopProgram& prog, const RunConfig& cfg,
                                 const std::vector<std::uint64_t>& seeds, std::size_t workers) {
  if (seeds.empty()) throw ConfigError("stability needs at least one run");
  StabilityReport rep;
  rep.problem = prog.name;
  rep.seeds = seeds;
  rep.converged.assign(seeds.size(), false);
  rep.seconds.assign(seeds.size(), 0.0);
  parallel_for(seeds.size(), workers, [&](std::size_t i) {
    RunConfig c = cfg;
    c.seed = seeds[i];
    auto r = cegis::infer(prog, c);
    rep.converged[i] = r.success;
    rep.seconds[i] = r.seconds;
  });
  return rep;
}

/// The same model with every gate frozen open and no gate regularization.
inline RunConfig ungated(RunConfig cfg) {
  cfg.gated = false;
  return cfg;
}

}  // namespace nlinv::harness
