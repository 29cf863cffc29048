#pragma once

// External SMT solver driver: runs one script per condition in a child
// process with a wall-clock limit and turns the answer into a status.

#include "nlinv/smtlib.hpp"

#include <nlohmann/json.hpp>

#include <chrono>
#include <cerrno>
#include <csignal>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <future>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include <fcntl.h>
#include <spawn.h>
#include <sys/wait.h>
#include <unistd.h>

extern char** environ;

namespace nlinv::checker {

enum class Status { Valid, Counterexample, Unknown };

inline const char* status_name(Status s) {
  switch (s) {
    case Status::Valid:
      return "valid";
    case Status::Counterexample:
      return "counterexample";
    case Status::Unknown:
      return "unknown";
  }
  return "?";
}

struct ConditionResult {
  Condition condition = Condition::Initiation;
  Status status = Status::Unknown;
  dsl::Valuation counterexample;
  std::string reason;  // for Unknown
  bool gcd_dependent = false;
  double seconds = 0.0;

  nlohmann::json to_json() const {
    nlohmann::json j{{"condition", condition_name(condition)}, {"status", status_name(status)}};
    if (status == Status::Counterexample) {
      nlohmann::json m = nlohmann::json::object();
      for (const auto& [k, v] : counterexample) m[k] = to_string(v);
      j["counterexample"] = m;
    }
    if (!reason.empty()) j["reason"] = reason;
    j["seconds"] = seconds;
    return j;
  }
};

struct VerificationOutcome {
  std::array<ConditionResult, 3> results;

  const ConditionResult& operator[](Condition c) const { return results[static_cast<std::size_t>(c)]; }

  bool valid() const {
    for (const auto& r : results)
      if (r.status != Status::Valid) return false;
    return true;
  }

  /// Every condition is proven except ones left open only because of gcd.
  bool valid_modulo_gcd() const {
    bool open = false;
    for (const auto& r : results) {
      if (r.status == Status::Valid) continue;
      if (r.status == Status::Unknown && r.gcd_dependent) {
        open = true;
        continue;
      }
      return false;
    }
    return open;
  }

  bool has_counterexample() const {
    for (const auto& r : results)
      if (r.status == Status::Counterexample) return true;
    return false;
  }

  std::string verdict() const {
    if (valid()) return "valid";
    if (valid_modulo_gcd()) return "valid-modulo-gcd";
    if (has_counterexample()) return "invalid";
    return "unknown";
  }

  double seconds() const {
    double s = 0;
    for (const auto& r : results) s += r.seconds;
    return s;
  }

  nlohmann::json to_json() const {
    nlohmann::json j{{"verdict", verdict()}};
    for (const auto& r : results) j["conditions"].push_back(r.to_json());
    return j;
  }
};

// ---------------------------------------------------------------------------
// Output parsing

namespace sexp {

struct Node {
  std::string atom;  // empty for lists
  std::vector<Node> items;
  bool is_list = false;
};

/// Parses all top-level s-expressions; throws ParseError on imbalance.
inline std::vector<Node> parse_all(std::string_view s) {
  std::vector<Node> stack(1);
  stack[0].is_list = true;
  std::size_t i = 0;
  while (i < s.size()) {
    char c = s[i];
    if (std::isspace(static_cast<unsigned char>(c))) {
      ++i;
    } else if (c == ';') {
      while (i < s.size() && s[i] != '\n') ++i;
    } else if (c == '(') {
      stack.emplace_back();
      stack.back().is_list = true;
      ++i;
    } else if (c == ')') {
      if (stack.size() < 2) throw ParseError("unbalanced ')' in solver output", 0, 0);
      Node n = std::move(stack.back());
      stack.pop_back();
      stack.back().items.push_back(std::move(n));
      ++i;
    } else if (c == '|') {
      std::size_t j = s.find('|', i + 1);
      if (j == std::string_view::npos) throw ParseError("unterminated symbol in solver output", 0, 0);
      stack.back().items.push_back(Node{std::string(s.substr(i + 1, j - i - 1)), {}, false});
      i = j + 1;
    } else if (c == '"') {
      std::size_t j = i + 1;
      while (j < s.size() && !(s[j] == '"' && (j + 1 >= s.size() || s[j + 1] != '"'))) j += s[j] == '"' ? 2 : 1;
      if (j >= s.size()) throw ParseError("unterminated string in solver output", 0, 0);
      stack.back().items.push_back(Node{std::string(s.substr(i, j - i + 1)), {}, false});
      i = j + 1;
    } else {
      std::size_t j = i;
      while (j < s.size() && !std::isspace(static_cast<unsigned char>(s[j])) && s[j] != '(' && s[j] != ')') ++j;
      stack.back().items.push_back(Node{std::string(s.substr(i, j - i)), {}, false});
      i = j;
    }
  }
  if (stack.size() != 1) throw ParseError("unbalanced '(' in solver output", 0, 0);
  return std::move(stack[0].items);
}

/// Numeric value: 5, 1.5, (- 5), (/ 1 2), (- (/ 1 2)), (/ (- 1) 2.0).
inline Rational value(const Node& n) {
  if (!n.is_list) return parse_rational(n.atom);
  if (n.items.size() == 2 && !n.items[0].is_list && n.items[0].atom == "-") return -value(n.items[1]);
  if (n.items.size() == 3 && !n.items[0].is_list && n.items[0].atom == "/") {
    Rational d = value(n.items[2]);
    if (d == 0) throw ParseError("division by zero in model value", 0, 0);
    return value(n.items[1]) / d;
  }
  throw ParseError("unsupported model value", 0, 0);
}

}  // namespace sexp

struct SolverAnswer {
  std::string status;  // sat, unsat, unknown, timeout, error
  dsl::Valuation model;
  std::string detail;
};

/// Reads the first status line and, after sat, the model's nullary
/// constants (other definitions are ignored). Quoted names lose their bars.
inline SolverAnswer parse_answer(const std::string& out) {
  SolverAnswer a;
  std::istringstream in(out);
  std::string line;
  std::size_t consumed = 0;
  while (std::getline(in, line)) {
    consumed += line.size() + 1;
    auto b = line.find_first_not_of(" \t\r");
    if (b == std::string::npos) continue;
    std::string t = line.substr(b, line.find_last_not_of(" \t\r") - b + 1);
    if (t == "sat" || t == "unsat" || t == "unknown" || t == "timeout") {
      a.status = t;
      break;
    }
    a.status = "error";
    a.detail = t;
    return a;
  }
  if (a.status.empty()) {
    a.status = "error";
    a.detail = "no answer from solver";
    return a;
  }
  if (a.status != "sat") return a;
  try {
    auto nodes = sexp::parse_all(std::string_view(out).substr(std::min(consumed, out.size())));
    if (nodes.empty() || !nodes[0].is_list) throw ParseError("missing model", 0, 0);
    for (const auto& d : nodes[0].items) {
      if (!d.is_list) continue;  // the "model" keyword of older outputs
      if (d.items.size() != 5 || d.items[0].atom != "define-fun") throw ParseError("malformed model entry", 0, 0);
      if (!d.items[2].is_list) throw ParseError("malformed model entry", 0, 0);
      if (!d.items[2].items.empty()) continue;  // function definitions
      a.model[d.items[1].atom] = sexp::value(d.items[4]);
    }
  } catch (const std::exception& e) {
    a.status = "error";
    a.detail = std::string("malformed model: ") + e.what();
    a.model.clear();
  }
  return a;
}

// ---------------------------------------------------------------------------
// Process driver

struct SolverConfig {
  std::string path = "z3";
  std::vector<std::string> args{"-smt2"};
  double timeout_seconds = 60.0;
  std::filesystem::path work_dir;  // empty: a fresh directory under the system temp dir
  GcdMode gcd = GcdMode::Uninterpreted;
  bool parallel = true;
};

/// Absolute path of the solver binary; throws SolverUnavailable.
inline std::string resolve_solver(const std::string& path) {
  namespace fs = std::filesystem;
  if (path.find('/') != std::string::npos) {
    if (::access(path.c_str(), X_OK) == 0) return path;
    throw SolverUnavailable("solver '" + path + "' is not an executable file");
  }
  const char* env = std::getenv("PATH");
  std::stringstream ss(env ? env : "");
  std::string dir;
  while (std::getline(ss, dir, ':')) {
    if (dir.empty()) continue;
    fs::path p = fs::path(dir) / path;
    if (::access(p.c_str(), X_OK) == 0 && fs::is_regular_file(p)) return p.string();
  }
  throw SolverUnavailable("solver '" + path + "' was not found on PATH");
}

struct ProcessResult {
  int exit_code = -1;
  bool timed_out = false;
  std::string out;
  std::string err;
};

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Runs `exe args... script`, killing it after `timeout` seconds.
inline ProcessResult run_process(const std::string& exe, const std::vector<std::string>& args,
                                 const std::filesystem::path& script, double timeout) {
  auto out_path = script;
  out_path += ".out";
  auto err_path = script;
  err_path += ".err";
  posix_spawn_file_actions_t fa;
  posix_spawn_file_actions_init(&fa);
  posix_spawn_file_actions_addopen(&fa, 0, "/dev/null", O_RDONLY, 0);
  posix_spawn_file_actions_addopen(&fa, 1, out_path.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0644);
  posix_spawn_file_actions_addopen(&fa, 2, err_path.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0644);
  std::vector<std::string> argv_s{exe};
  argv_s.insert(argv_s.end(), args.begin(), args.end());
  argv_s.push_back(script.string());
  std::vector<char*> argv;
  for (auto& s : argv_s) argv.push_back(s.data());
  argv.push_back(nullptr);
  pid_t pid = 0;
  int rc = posix_spawn(&pid, exe.c_str(), &fa, nullptr, argv.data(), environ);
  posix_spawn_file_actions_destroy(&fa);
  if (rc != 0) throw SolverUnavailable("could not start solver '" + exe + "': " + std::strerror(rc));

  ProcessResult r;
  auto deadline = std::chrono::steady_clock::now() + std::chrono::duration<double>(timeout);
  int status = 0;
  for (;;) {
    pid_t w = ::waitpid(pid, &status, WNOHANG);
    if (w == pid) break;
    if (w < 0) break;
    if (std::chrono::steady_clock::now() > deadline) {
      ::kill(pid, SIGKILL);
      ::waitpid(pid, &status, 0);
      r.timed_out = true;
      break;
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(5));
  }
  if (!r.timed_out && WIFEXITED(status)) r.exit_code = WEXITSTATUS(status);
  r.out = slurp(out_path);
  r.err = slurp(err_path);
  return r;
}

inline std::filesystem::path make_work_dir(const std::filesystem::path& requested) {
  namespace fs = std::filesystem;
  if (!requested.empty()) {
    fs::create_directories(requested);
    return requested;
  }
  std::string tmpl = (fs::temp_directory_path() / "nlinv-XXXXXX").string();
  if (!::mkdtemp(tmpl.data())) throw Error("could not create a work directory");
  return tmpl;
}

/// Runs one script and maps the answer, including the replay self-check of
/// any counterexample.
inline ConditionResult check_condition(const VerificationProblem& vp, const Script& s, const SolverConfig& cfg,
                                       const std::string& exe, const std::filesystem::path& dir) {
  ConditionResult r;
  r.condition = s.condition;
  r.gcd_dependent = s.uses_gcd;
  if (s.uses_gcd && cfg.gcd == GcdMode::Unsupported) {
    r.reason = "gcd unsupported";
    return r;
  }
  auto path = dir / (std::string(condition_name(s.condition)) + ".smt2");
  {
    std::ofstream f(path);
    f << s.text;
  }
  auto args = cfg.args;
  // the solver's own limit ends the search cleanly; the watchdog is a backstop
  args.push_back("-T:" + std::to_string(static_cast<long>(std::ceil(cfg.timeout_seconds))));
  auto t0 = std::chrono::steady_clock::now();
  ProcessResult p = run_process(exe, args, path, cfg.timeout_seconds + 1.0);
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (p.timed_out) {
    r.reason = "timeout";
    return r;
  }
  SolverAnswer a = parse_answer(p.out);
  if (a.status == "unsat") {
    r.status = Status::Valid;
  } else if (a.status == "timeout") {
    r.reason = "timeout";
  } else if (a.status == "unknown") {
    r.reason = "solver returned unknown";
  } else if (a.status == "sat") {
    dsl::Valuation state;
    for (const auto& v : vp.program->variables()) {
      auto it = a.model.find(v);
      state[v] = it == a.model.end() ? Rational(0) : it->second;
    }
    if (falsifies(vp, s.condition, state)) {
      r.status = Status::Counterexample;
      r.counterexample = std::move(state);
    } else {
      r.reason = s.uses_gcd ? "gcd unsupported" : "counterexample did not replay";
    }
  } else {
    std::string msg = a.detail;
    if (p.exit_code != 0) msg += (msg.empty() ? "" : "; ") + std::string("exit code ") + std::to_string(p.exit_code);
    if (!p.err.empty()) msg += (msg.empty() ? "" : "; ") + p.err.substr(0, p.err.find_last_not_of("\n") + 1);
    r.reason = "solver error: " + msg;
  }
  return r;
}

/// Emits and checks all three conditions.
inline VerificationOutcome verify(const VerificationProblem& vp, const SolverConfig& cfg) {
  std::string exe = resolve_solver(cfg.path);
  auto scripts = emit_smtlib(vp, cfg.gcd);
  auto dir = make_work_dir(cfg.work_dir);
  VerificationOutcome out;
  if (cfg.parallel) {
    std::array<std::future<ConditionResult>, 3> fs;
    for (std::size_t i = 0; i < 3; ++i)
      fs[i] = std::async(std::launch::async, [&, i] { return check_condition(vp, scripts[i], cfg, exe, dir); });
    for (std::size_t i = 0; i < 3; ++i) out.results[i] = fs[i].get();
  } else {
    for (std::size_t i = 0; i < 3; ++i) out.results[i] = check_condition(vp, scripts[i], cfg, exe, dir);
  }
  if (cfg.work_dir.empty()) {
    std::error_code ec;
    std::filesystem::remove_all(dir, ec);
  }
  return out;
}

/// Emits and checks a single condition.
inline ConditionResult check_one(const VerificationProblem& vp, Condition c, const SolverConfig& cfg) {
  std::string exe = resolve_solver(cfg.path);
  auto scripts = emit_smtlib(vp, cfg.gcd);
  auto dir = make_work_dir(cfg.work_dir);
  auto r = check_condition(vp, scripts[static_cast<std::size_t>(c)], cfg, exe, dir);
  if (cfg.work_dir.empty()) {
    std::error_code ec;
    std::filesystem::remove_all(dir, ec);
  }
  return r;
}

/// Whether `premise` implies `goal` over the integers, for every value of
/// the variables they mention.
inline ConditionResult check_entailment(const Formula& premise, const Formula& goal, const SolverConfig& cfg) {
  std::string exe = resolve_solver(cfg.path);
  std::set<std::string> vars;
  std::vector<Atom> atoms;
  collect_atoms(premise, atoms);
  collect_atoms(goal, atoms);
  for (const auto& a : atoms)
    for (const auto& [t, c] : a.coeffs) {
      for (const auto& f : t.factors) vars.insert(f.first);
      for (const auto& v : t.args) vars.insert(v);
    }
  Symbols sym = [](const std::string& v) { return quote(v); };
  bool gcd = false;
  std::string p = emit_formula(premise, sym, &gcd);
  std::string g = emit_formula(goal, sym, &gcd);
  std::ostringstream os;
  os << "(set-logic ALL)\n";
  if (gcd) os << detail::gcd_preamble(cfg.gcd);
  for (const auto& v : vars) os << "(declare-const " << quote(v) << " Int)\n";
  os << "(assert " << p << ")\n(assert (not " << g << "))\n(check-sat)\n(get-model)\n";

  auto dir = make_work_dir(cfg.work_dir);
  auto path = dir / "entailment.smt2";
  {
    std::ofstream f(path);
    f << os.str();
  }
  auto args = cfg.args;
  args.push_back("-T:" + std::to_string(static_cast<long>(std::ceil(cfg.timeout_seconds))));
  ConditionResult r;
  r.condition = Condition::Sufficiency;
  r.gcd_dependent = gcd;
  auto t0 = std::chrono::steady_clock::now();
  ProcessResult pr = run_process(exe, args, path, cfg.timeout_seconds + 1.0);
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  SolverAnswer a = parse_answer(pr.out);
  if (pr.timed_out || a.status == "timeout") {
    r.reason = "timeout";
  } else if (a.status == "unsat") {
    r.status = Status::Valid;
  } else if (a.status == "sat") {
    dsl::Valuation state;
    for (const auto& v : vars) state[v] = a.model.count(v) ? a.model.at(v) : Rational(0);
    try {
      if (eval(premise, state) && !eval(goal, state)) {
        r.status = Status::Counterexample;
        r.counterexample = std::move(state);
      } else {
        r.reason = "counterexample did not replay";
      }
    } catch (const Error&) {
      r.reason = "counterexample did not replay";
    }
  } else {
    r.reason = a.status == "unknown" ? "solver returned unknown" : "solver error: " + a.detail;
  }
  if (cfg.work_dir.empty()) {
    std::error_code ec;
    std::filesystem::remove_all(dir, ec);
  }
  return r;
}

}  // namespace nlinv::checker
