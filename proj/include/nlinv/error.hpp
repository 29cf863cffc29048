#pragma once

#include <stdexcept>
#include <string>

namespace nlinv {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Source-level error from the loop DSL, with a 1-based position.
class ParseError : public Error {
 public:
  ParseError(const std::string& msg, int line, int column)
      : Error("line " + std::to_string(line) + ", column " + std::to_string(column) + ": " + msg),
        line_(line),
        column_(column) {}

  int line() const { return line_; }
  int column() const { return column_; }

 private:
  int line_;
  int column_;
};

/// Raised by the interpreter (division by zero, external function domain errors).
class EvalError : public Error {
 public:
  using Error::Error;
};

class EmitError : public Error {
 public:
  using Error::Error;
};

class SolverUnavailable : public Error {
 public:
  using Error::Error;
};

class TrainingError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace nlinv
