#pragma once

// Loop DSL: a minimal C-like language for single-loop programs.
//
//   //name: sqrt1
//   //pre: n >= 0
//   //post: a*a <= n && n < (a+1)*(a+1)
//   //degree: 2
//   int n;                       <- input (no initializer)
//   a = 0; s = 1; t = 1;         <- initialized variables
//   while (s <= n) {
//     a += 1; t += 2; s += t;
//   }
//   return a;                    <- optional, ignored
//
// Body statements are assignments (`=`, `+=`, `-=`, `*=`, `++`, `--`).
// Conditional expressions `c ? e1 : e2` replace branches. The external
// functions `gcd` and `mod` may be called with two integer arguments.

#include "nlinv/error.hpp"
#include "nlinv/rational.hpp"

#include <algorithm>
#include <cctype>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

namespace nlinv::dsl {

struct SourceLoc {
  int line = 1;
  int column = 1;
};

enum class UnaryOp { Neg, Not };
enum class BinaryOp { Add, Sub, Mul, Div, Pow, Eq, Ne, Lt, Le, Gt, Ge, And, Or };

struct Expr;
using ExprPtr = std::shared_ptr<const Expr>;

struct Number {
  Rational value;
};
struct Boolean {
  bool value;
};
struct Var {
  std::string name;
};
struct Unary {
  UnaryOp op;
  ExprPtr arg;
};
struct Binary {
  BinaryOp op;
  ExprPtr lhs;
  ExprPtr rhs;
};
struct Call {
  std::string fn;
  std::vector<ExprPtr> args;
};
struct Conditional {
  ExprPtr cond;
  ExprPtr then_branch;
  ExprPtr else_branch;
};

struct Expr {
  std::variant<Number, Boolean, Var, Unary, Binary, Call, Conditional> node;
  SourceLoc loc;
};

inline ExprPtr make_expr(decltype(Expr::node) node, SourceLoc loc = {}) {
  return std::make_shared<const Expr>(Expr{std::move(node), loc});
}
inline ExprPtr number(Rational v) { return make_expr(Number{std::move(v)}); }
inline ExprPtr variable(std::string name) { return make_expr(Var{std::move(name)}); }
inline ExprPtr binary(BinaryOp op, ExprPtr a, ExprPtr b) {
  return make_expr(Binary{op, std::move(a), std::move(b)});
}

inline bool is_comparison(BinaryOp op) {
  return op == BinaryOp::Eq || op == BinaryOp::Ne || op == BinaryOp::Lt || op == BinaryOp::Le ||
         op == BinaryOp::Gt || op == BinaryOp::Ge;
}

inline bool is_boolean(const Expr& e) {
  if (std::holds_alternative<Boolean>(e.node)) return true;
  if (auto* u = std::get_if<Unary>(&e.node)) return u->op == UnaryOp::Not;
  if (auto* b = std::get_if<Binary>(&e.node))
    return is_comparison(b->op) || b->op == BinaryOp::And || b->op == BinaryOp::Or;
  return false;
}

/// Collects every variable name referenced by `e`.
inline void collect_vars(const Expr& e, std::set<std::string>& out) {
  std::visit(
      [&](const auto& n) {
        using T = std::decay_t<decltype(n)>;
        if constexpr (std::is_same_v<T, Var>) {
          out.insert(n.name);
        } else if constexpr (std::is_same_v<T, Unary>) {
          collect_vars(*n.arg, out);
        } else if constexpr (std::is_same_v<T, Binary>) {
          collect_vars(*n.lhs, out);
          collect_vars(*n.rhs, out);
        } else if constexpr (std::is_same_v<T, Call>) {
          for (const auto& a : n.args) collect_vars(*a, out);
        } else if constexpr (std::is_same_v<T, Conditional>) {
          collect_vars(*n.cond, out);
          collect_vars(*n.then_branch, out);
          collect_vars(*n.else_branch, out);
        }
      },
      e.node);
}

inline std::set<std::string> vars_of(const Expr& e) {
  std::set<std::string> s;
  collect_vars(e, s);
  return s;
}

// ---------------------------------------------------------------------------
// External functions

struct ExternalFn {
  std::string name;
  int arity = 2;
  std::function<Rational(const Rational&, const Rational&)> evaluate;
};

inline Rational eval_gcd(const Rational& a, const Rational& b) {
  if (!is_integer(a) || !is_integer(b))
    throw EvalError("gcd applied to non-integer argument (" + to_string(a) + ", " + to_string(b) + ")");
  return Rational(nlinv::gcd(num(a), num(b)));
}

/// Euclidean remainder, matching SMT-LIB `mod`: 0 <= r < |b|.
inline Rational eval_mod(const Rational& a, const Rational& b) {
  if (!is_integer(a) || !is_integer(b))
    throw EvalError("mod applied to non-integer argument (" + to_string(a) + ", " + to_string(b) + ")");
  Integer x = num(a);
  Integer y = num(b);
  if (y == 0) throw EvalError("mod by zero");
  Integer m = y < 0 ? Integer(-y) : y;
  Integer r = x % m;
  if (r < 0) r += m;
  return Rational(r);
}

inline const std::vector<ExternalFn>& external_table() {
  static const std::vector<ExternalFn> table = {
      {"gcd", 2, eval_gcd},
      {"mod", 2, eval_mod},
  };
  return table;
}

inline const ExternalFn* find_external(std::string_view name) {
  for (const auto& f : external_table())
    if (f.name == name) return &f;
  return nullptr;
}

// ---------------------------------------------------------------------------
// Program

struct Assignment {
  std::string target;
  ExprPtr value;
  SourceLoc loc;
};

struct LoopProgram {
  std::string name;
  std::vector<std::string> params;  // inputs; the precondition constrains them
  std::vector<Assignment> inits;    // straight-line code before the loop
  ExprPtr pre;
  ExprPtr guard;
  std::vector<Assignment> body;
  ExprPtr post;
  std::vector<ExternalFn> externals;
  int degree_hint = 0;  // `//degree:` annotation, 0 if absent

  /// Params in declaration order followed by initialized variables.
  std::vector<std::string> variables() const {
    std::vector<std::string> out = params;
    for (const auto& a : inits)
      if (std::find(out.begin(), out.end(), a.target) == out.end()) out.push_back(a.target);
    return out;
  }

  bool is_param(const std::string& v) const {
    return std::find(params.begin(), params.end(), v) != params.end();
  }

  std::set<std::string> assigned_in_body() const {
    std::set<std::string> s;
    for (const auto& a : body) s.insert(a.target);
    return s;
  }

  bool uses_external(std::string_view fn) const {
    return std::any_of(externals.begin(), externals.end(), [&](const ExternalFn& f) { return f.name == fn; });
  }
};

// ---------------------------------------------------------------------------
// Lexer

enum class Tok {
  Ident,
  Number,
  LParen,
  RParen,
  LBrace,
  RBrace,
  Semi,
  Comma,
  Question,
  Colon,
  Plus,
  Minus,
  Star,
  Slash,
  Caret,
  Assign,
  PlusAssign,
  MinusAssign,
  StarAssign,
  PlusPlus,
  MinusMinus,
  EqEq,
  NotEq,
  Lt,
  Le,
  Gt,
  Ge,
  AndAnd,
  OrOr,
  Bang,
  End,
};

struct Token {
  Tok kind;
  std::string text;
  SourceLoc loc;
};

struct Annotation {
  std::string key;
  std::string text;
  SourceLoc loc;  // position of the first character of `text`
};

class Lexer {
 public:
  Lexer(std::string_view src, SourceLoc origin = {}) : src_(src), line_(origin.line), col_(origin.column) {}

  std::vector<Token> tokenize(std::vector<Annotation>* annotations = nullptr) {
    std::vector<Token> out;
    for (;;) {
      skip_space(annotations);
      SourceLoc loc{line_, col_};
      if (pos_ >= src_.size()) {
        out.push_back({Tok::End, "", loc});
        return out;
      }
      char c = src_[pos_];
      if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
        std::string id;
        while (pos_ < src_.size() &&
               (std::isalnum(static_cast<unsigned char>(src_[pos_])) || src_[pos_] == '_'))
          id += advance();
        out.push_back({Tok::Ident, id, loc});
        continue;
      }
      if (std::isdigit(static_cast<unsigned char>(c)) ||
          (c == '.' && pos_ + 1 < src_.size() && std::isdigit(static_cast<unsigned char>(src_[pos_ + 1])))) {
        std::string lit;
        bool dot = false;
        while (pos_ < src_.size() &&
               (std::isdigit(static_cast<unsigned char>(src_[pos_])) || (src_[pos_] == '.' && !dot))) {
          if (src_[pos_] == '.') dot = true;
          lit += advance();
        }
        out.push_back({Tok::Number, lit, loc});
        continue;
      }
      out.push_back(punct(loc));
    }
  }

 private:
  char advance() {
    char c = src_[pos_++];
    if (c == '\n') {
      ++line_;
      col_ = 1;
    } else {
      ++col_;
    }
    return c;
  }

  bool starts_with(std::string_view s) const { return src_.substr(pos_, s.size()) == s; }

  void skip_space(std::vector<Annotation>* annotations) {
    for (;;) {
      while (pos_ < src_.size() && std::isspace(static_cast<unsigned char>(src_[pos_]))) advance();
      if (starts_with("//")) {
        advance();
        advance();
        while (pos_ < src_.size() && (src_[pos_] == ' ' || src_[pos_] == '\t')) advance();
        SourceLoc start{line_, col_};
        std::string text;
        while (pos_ < src_.size() && src_[pos_] != '\n') text += advance();
        if (annotations) {
          static const char* keys[] = {"pre", "post", "name", "degree", "extern"};
          for (const char* k : keys) {
            std::string prefix = std::string(k) + ":";
            if (text.rfind(prefix, 0) == 0) {
              std::size_t skip = prefix.size();
              while (skip < text.size() && (text[skip] == ' ' || text[skip] == '\t')) ++skip;
              annotations->push_back(
                  {k, text.substr(skip), SourceLoc{start.line, start.column + static_cast<int>(skip)}});
              break;
            }
          }
        }
        continue;
      }
      if (starts_with("/*")) {
        SourceLoc start{line_, col_};
        advance();
        advance();
        while (pos_ < src_.size() && !starts_with("*/")) advance();
        if (pos_ >= src_.size()) throw ParseError("unterminated block comment", start.line, start.column);
        advance();
        advance();
        continue;
      }
      return;
    }
  }

  Token punct(SourceLoc loc) {
    struct Op {
      const char* text;
      Tok kind;
    };
    static const Op ops[] = {
        {"+=", Tok::PlusAssign}, {"-=", Tok::MinusAssign}, {"*=", Tok::StarAssign}, {"++", Tok::PlusPlus},
        {"--", Tok::MinusMinus}, {"==", Tok::EqEq},        {"!=", Tok::NotEq},      {"<=", Tok::Le},
        {">=", Tok::Ge},         {"&&", Tok::AndAnd},      {"||", Tok::OrOr},       {"(", Tok::LParen},
        {")", Tok::RParen},      {"{", Tok::LBrace},       {"}", Tok::RBrace},      {";", Tok::Semi},
        {",", Tok::Comma},       {"?", Tok::Question},     {":", Tok::Colon},       {"+", Tok::Plus},
        {"-", Tok::Minus},       {"*", Tok::Star},         {"/", Tok::Slash},       {"^", Tok::Caret},
        {"=", Tok::Assign},      {"<", Tok::Lt},           {">", Tok::Gt},          {"!", Tok::Bang},
    };
    for (const auto& op : ops) {
      if (starts_with(op.text)) {
        std::string t = op.text;
        for (std::size_t i = 0; i < t.size(); ++i) advance();
        return {op.kind, t, loc};
      }
    }
    throw ParseError(std::string("unexpected character '") + src_[pos_] + "'", loc.line, loc.column);
  }

  std::string_view src_;
  std::size_t pos_ = 0;
  int line_;
  int col_;
};

// ---------------------------------------------------------------------------
// Parser

class Parser {
 public:
  explicit Parser(std::vector<Token> toks) : toks_(std::move(toks)) {}

  ExprPtr expression() { return ternary(); }

  bool at_end() const { return peek().kind == Tok::End; }
  const Token& peek(std::size_t k = 0) const { return toks_[std::min(pos_ + k, toks_.size() - 1)]; }

  Token expect(Tok kind, const char* what) {
    if (peek().kind != kind) fail(std::string("expected ") + what + ", found '" + describe(peek()) + "'");
    return toks_[pos_++];
  }

  bool accept(Tok kind) {
    if (peek().kind != kind) return false;
    ++pos_;
    return true;
  }

  [[noreturn]] void fail(const std::string& msg) const { fail_at(msg, peek().loc); }
  [[noreturn]] static void fail_at(const std::string& msg, SourceLoc loc) {
    throw ParseError(msg, loc.line, loc.column);
  }

  static std::string describe(const Token& t) { return t.kind == Tok::End ? "end of input" : t.text; }

 private:
  ExprPtr ternary() {
    ExprPtr cond = logical_or();
    if (peek().kind == Tok::Question) {
      SourceLoc loc = toks_[pos_++].loc;
      ExprPtr a = ternary();
      expect(Tok::Colon, "':'");
      ExprPtr b = ternary();
      return make_expr(Conditional{cond, a, b}, loc);
    }
    return cond;
  }

  ExprPtr logical_or() {
    ExprPtr lhs = logical_and();
    while (peek().kind == Tok::OrOr) {
      SourceLoc loc = toks_[pos_++].loc;
      lhs = make_expr(Binary{BinaryOp::Or, lhs, logical_and()}, loc);
    }
    return lhs;
  }

  ExprPtr logical_and() {
    ExprPtr lhs = comparison();
    while (peek().kind == Tok::AndAnd) {
      SourceLoc loc = toks_[pos_++].loc;
      lhs = make_expr(Binary{BinaryOp::And, lhs, comparison()}, loc);
    }
    return lhs;
  }

  ExprPtr comparison() {
    if (peek().kind == Tok::Bang) {
      SourceLoc loc = toks_[pos_++].loc;
      return make_expr(Unary{UnaryOp::Not, comparison()}, loc);
    }
    ExprPtr lhs = additive();
    static const std::pair<Tok, BinaryOp> cmps[] = {{Tok::EqEq, BinaryOp::Eq}, {Tok::NotEq, BinaryOp::Ne},
                                                    {Tok::Lt, BinaryOp::Lt},   {Tok::Le, BinaryOp::Le},
                                                    {Tok::Gt, BinaryOp::Gt},   {Tok::Ge, BinaryOp::Ge}};
    for (const auto& [tok, op] : cmps) {
      if (peek().kind == tok) {
        SourceLoc loc = toks_[pos_++].loc;
        return make_expr(Binary{op, lhs, additive()}, loc);
      }
    }
    return lhs;
  }

  ExprPtr additive() {
    ExprPtr lhs = multiplicative();
    for (;;) {
      if (peek().kind == Tok::Plus || peek().kind == Tok::Minus) {
        Token t = toks_[pos_++];
        lhs = make_expr(Binary{t.kind == Tok::Plus ? BinaryOp::Add : BinaryOp::Sub, lhs, multiplicative()}, t.loc);
      } else {
        return lhs;
      }
    }
  }

  ExprPtr multiplicative() {
    ExprPtr lhs = unary();
    for (;;) {
      if (peek().kind == Tok::Star || peek().kind == Tok::Slash) {
        Token t = toks_[pos_++];
        lhs = make_expr(Binary{t.kind == Tok::Star ? BinaryOp::Mul : BinaryOp::Div, lhs, unary()}, t.loc);
      } else {
        return lhs;
      }
    }
  }

  ExprPtr unary() {
    if (peek().kind == Tok::Minus) {
      SourceLoc loc = toks_[pos_++].loc;
      return make_expr(Unary{UnaryOp::Neg, unary()}, loc);
    }
    if (peek().kind == Tok::Plus) {
      ++pos_;
      return unary();
    }
    return power();
  }

  ExprPtr power() {
    ExprPtr base = primary();
    if (peek().kind == Tok::Caret) {
      SourceLoc loc = toks_[pos_++].loc;
      ExprPtr exp = unary();  // right-associative
      auto* n = std::get_if<Number>(&exp->node);
      if (!n || !is_integer(n->value) || n->value < 0)
        fail_at("exponent must be a non-negative integer literal", exp->loc);
      return make_expr(Binary{BinaryOp::Pow, base, exp}, loc);
    }
    return base;
  }

  ExprPtr primary() {
    const Token& t = peek();
    switch (t.kind) {
      case Tok::Number: {
        ++pos_;
        return make_expr(Number{parse_rational(t.text)}, t.loc);
      }
      case Tok::Ident: {
        ++pos_;
        if (t.text == "true" || t.text == "false") return make_expr(Boolean{t.text == "true"}, t.loc);
        if (peek().kind == Tok::LParen) {
          ++pos_;
          std::vector<ExprPtr> args;
          if (peek().kind != Tok::RParen) {
            do {
              args.push_back(expression());
            } while (accept(Tok::Comma));
          }
          expect(Tok::RParen, "')'");
          const ExternalFn* fn = find_external(t.text);
          if (!fn) fail_at("unknown function '" + t.text + "'", t.loc);
          if (static_cast<int>(args.size()) != fn->arity)
            fail_at("function '" + t.text + "' expects " + std::to_string(fn->arity) + " arguments", t.loc);
          return make_expr(Call{t.text, std::move(args)}, t.loc);
        }
        return make_expr(Var{t.text}, t.loc);
      }
      case Tok::LParen: {
        ++pos_;
        ExprPtr e = expression();
        expect(Tok::RParen, "')'");
        return e;
      }
      default:
        fail("expected an expression, found '" + describe(t) + "'");
    }
  }

  std::vector<Token> toks_;
  std::size_t pos_ = 0;
};

// ---------------------------------------------------------------------------
// Type checks

inline void require_numeric(const Expr& e);

inline void require_boolean(const Expr& e) {
  if (!is_boolean(e)) throw ParseError("expected a boolean expression", e.loc.line, e.loc.column);
  if (auto* u = std::get_if<Unary>(&e.node)) {
    require_boolean(*u->arg);
  } else if (auto* b = std::get_if<Binary>(&e.node)) {
    if (is_comparison(b->op)) {
      require_numeric(*b->lhs);
      require_numeric(*b->rhs);
    } else {
      require_boolean(*b->lhs);
      require_boolean(*b->rhs);
    }
  }
}

inline void require_numeric(const Expr& e) {
  if (is_boolean(e)) throw ParseError("expected a numeric expression", e.loc.line, e.loc.column);
  std::visit(
      [&](const auto& n) {
        using T = std::decay_t<decltype(n)>;
        if constexpr (std::is_same_v<T, Unary>) {
          require_numeric(*n.arg);
        } else if constexpr (std::is_same_v<T, Binary>) {
          require_numeric(*n.lhs);
          require_numeric(*n.rhs);
        } else if constexpr (std::is_same_v<T, Call>) {
          for (const auto& a : n.args) require_numeric(*a);
        } else if constexpr (std::is_same_v<T, Conditional>) {
          require_boolean(*n.cond);
          require_numeric(*n.then_branch);
          require_numeric(*n.else_branch);
        }
      },
      e.node);
}

inline void collect_calls(const Expr& e, std::set<std::string>& out) {
  std::visit(
      [&](const auto& n) {
        using T = std::decay_t<decltype(n)>;
        if constexpr (std::is_same_v<T, Unary>) {
          collect_calls(*n.arg, out);
        } else if constexpr (std::is_same_v<T, Binary>) {
          collect_calls(*n.lhs, out);
          collect_calls(*n.rhs, out);
        } else if constexpr (std::is_same_v<T, Call>) {
          out.insert(n.fn);
          for (const auto& a : n.args) collect_calls(*a, out);
        } else if constexpr (std::is_same_v<T, Conditional>) {
          collect_calls(*n.cond, out);
          collect_calls(*n.then_branch, out);
          collect_calls(*n.else_branch, out);
        }
      },
      e.node);
}

// ---------------------------------------------------------------------------
// Entry points

/// Parses a standalone expression (annotations, user-supplied invariants).
inline ExprPtr parse_expression(std::string_view text, SourceLoc origin = {}) {
  Parser p(Lexer(text, origin).tokenize());
  ExprPtr e = p.expression();
  if (!p.at_end()) p.fail("unexpected '" + Parser::describe(p.peek()) + "' after expression");
  return e;
}

inline ExprPtr conjoin(ExprPtr a, ExprPtr b) {
  if (!a) return b;
  if (!b) return a;
  return binary(BinaryOp::And, std::move(a), std::move(b));
}

namespace detail {

inline Assignment parse_assignment(Parser& p) {
  Token target = p.expect(Tok::Ident, "a variable name");
  if (target.text == "while") Parser::fail_at("nested/multiple loops unsupported", target.loc);
  if (target.text == "if") Parser::fail_at("branches are not supported; use a conditional expression", target.loc);
  auto lhs = make_expr(Var{target.text}, target.loc);
  ExprPtr value;
  Token op = p.peek();
  switch (op.kind) {
    case Tok::Assign:
      p.accept(Tok::Assign);
      value = p.expression();
      break;
    case Tok::PlusAssign:
    case Tok::MinusAssign:
    case Tok::StarAssign: {
      p.accept(op.kind);
      BinaryOp bop = op.kind == Tok::PlusAssign ? BinaryOp::Add
                     : op.kind == Tok::MinusAssign ? BinaryOp::Sub
                                                    : BinaryOp::Mul;
      value = make_expr(Binary{bop, lhs, p.expression()}, op.loc);
      break;
    }
    case Tok::PlusPlus:
    case Tok::MinusMinus:
      p.accept(op.kind);
      value = make_expr(Binary{op.kind == Tok::PlusPlus ? BinaryOp::Add : BinaryOp::Sub, lhs, number(1)}, op.loc);
      break;
    default:
      p.fail("expected an assignment operator after '" + target.text + "'");
  }
  p.expect(Tok::Semi, "';'");
  return {target.text, value, target.loc};
}

}  // namespace detail

/// Parses a whole `.loop` program. `fallback_name` is used when there is no
/// `//name:` annotation.
inline LoopProgram parse_program(std::string_view text, std::string fallback_name = "program") {
  std::vector<Annotation> notes;
  Parser p(Lexer(text).tokenize(&notes));
  LoopProgram prog;
  prog.name = std::move(fallback_name);

  std::set<std::string> declared;
  std::set<std::string> extern_names;
  bool saw_loop = false;
  SourceLoc loop_loc;

  while (!p.at_end()) {
    const Token& t = p.peek();
    if (t.kind != Tok::Ident) p.fail("unexpected '" + Parser::describe(t) + "'");
    if (t.text == "while") {
      if (saw_loop) Parser::fail_at("nested/multiple loops unsupported", t.loc);
      saw_loop = true;
      loop_loc = t.loc;
      p.accept(Tok::Ident);
      p.expect(Tok::LParen, "'('");
      prog.guard = p.expression();
      p.expect(Tok::RParen, "')'");
      p.expect(Tok::LBrace, "'{'");
      while (p.peek().kind != Tok::RBrace) {
        if (p.at_end()) p.fail("unterminated loop body");
        prog.body.push_back(detail::parse_assignment(p));
      }
      p.expect(Tok::RBrace, "'}'");
      continue;
    }
    if (t.text == "return") {
      if (!saw_loop) p.fail("'return' before the loop");
      p.accept(Tok::Ident);
      if (p.peek().kind != Tok::Semi) (void)p.expression();
      p.expect(Tok::Semi, "';'");
      if (!p.at_end()) p.fail("statements after 'return' are not supported");
      break;
    }
    if (saw_loop) p.fail("statements after the loop are not supported");
    if (t.text == "int") {
      p.accept(Tok::Ident);
      do {
        Token name = p.expect(Tok::Ident, "a variable name");
        if (declared.count(name.text)) Parser::fail_at("variable '" + name.text + "' declared twice", name.loc);
        declared.insert(name.text);
        if (p.accept(Tok::Assign)) {
          prog.inits.push_back({name.text, p.expression(), name.loc});
        } else {
          prog.params.push_back(name.text);
        }
      } while (p.accept(Tok::Comma));
      p.expect(Tok::Semi, "';'");
      continue;
    }
    if (t.text == "extern") {
      p.accept(Tok::Ident);
      do {
        Token name = p.expect(Tok::Ident, "an external function name");
        if (!find_external(name.text)) Parser::fail_at("unknown external function '" + name.text + "'", name.loc);
        extern_names.insert(name.text);
      } while (p.accept(Tok::Comma));
      p.expect(Tok::Semi, "';'");
      continue;
    }
    Assignment a = detail::parse_assignment(p);
    declared.insert(a.target);
    prog.inits.push_back(std::move(a));
  }
  if (!saw_loop) throw ParseError("program has no loop", 1, 1);

  for (const auto& n : notes) {
    if (n.key == "pre") {
      prog.pre = conjoin(prog.pre, parse_expression(n.text, n.loc));
    } else if (n.key == "post") {
      prog.post = conjoin(prog.post, parse_expression(n.text, n.loc));
    } else if (n.key == "name") {
      prog.name = n.text;
      while (!prog.name.empty() && std::isspace(static_cast<unsigned char>(prog.name.back()))) prog.name.pop_back();
    } else if (n.key == "degree") {
      try {
        prog.degree_hint = std::stoi(n.text);
      } catch (const std::exception&) {
        throw ParseError("degree annotation must be an integer", n.loc.line, n.loc.column);
      }
    } else if (n.key == "extern") {
      Parser ep(Lexer(n.text, n.loc).tokenize());
      do {
        Token name = ep.expect(Tok::Ident, "an external function name");
        if (!find_external(name.text)) Parser::fail_at("unknown external function '" + name.text + "'", name.loc);
        extern_names.insert(name.text);
      } while (ep.accept(Tok::Comma));
    }
  }
  if (!prog.pre) prog.pre = make_expr(Boolean{true});
  if (!prog.post) prog.post = make_expr(Boolean{true});

  // Resolution: reads must refer to inputs or variables initialized earlier.
  std::set<std::string> defined(prog.params.begin(), prog.params.end());
  auto check_reads = [&](const Expr& e, const std::set<std::string>& scope, const char* where) {
    for (const auto& v : vars_of(e))
      if (!scope.count(v))
        Parser::fail_at("undeclared variable '" + v + "' in " + where, e.loc);
  };
  require_boolean(*prog.pre);
  check_reads(*prog.pre, std::set<std::string>(prog.params.begin(), prog.params.end()), "precondition");
  for (const auto& a : prog.inits) {
    require_numeric(*a.value);
    check_reads(*a.value, defined, "initialization");
    defined.insert(a.target);
  }
  require_boolean(*prog.guard);
  check_reads(*prog.guard, defined, "loop guard");
  for (const auto& a : prog.body) {
    if (!defined.count(a.target)) Parser::fail_at("undeclared variable '" + a.target + "'", a.loc);
    require_numeric(*a.value);
    check_reads(*a.value, defined, "loop body");
  }
  require_boolean(*prog.post);
  check_reads(*prog.post, defined, "postcondition");

  std::set<std::string> calls;
  collect_calls(*prog.guard, calls);
  for (const auto& a : prog.body) collect_calls(*a.value, calls);
  for (const auto& a : prog.inits) collect_calls(*a.value, calls);
  collect_calls(*prog.post, calls);
  calls.insert(extern_names.begin(), extern_names.end());
  for (const auto& c : calls) prog.externals.push_back(*find_external(c));
  return prog;
}

}  // namespace nlinv::dsl
