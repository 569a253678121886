#pragma once

#include <stdexcept>
#include <string>

namespace qkd {

/// Iterative solver ran out of its iteration budget.  Carries the last
/// residual seen so callers can report how far from convergence it stopped.
class ConvergenceError : public std::runtime_error {
 public:
  ConvergenceError(const std::string& what, double last_residual)
      : std::runtime_error(what), last_residual_(last_residual) {}
  double last_residual() const { return last_residual_; }

 private:
  double last_residual_;
};

/// NaN, overflow or another numeric breakdown inside a computation.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Rejected scenario/dataset file.  Remembers the offending line (1-based,
/// 0 when the problem is not tied to a single line).
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& file, int line, const std::string& what)
      : std::runtime_error(file + ":" + std::to_string(line) + ": " + what),
        line_(line) {}
  int line() const { return line_; }

 private:
  int line_;
};

}  // namespace qkd
