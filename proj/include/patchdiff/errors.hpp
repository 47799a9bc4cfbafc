#pragma once

#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace patchdiff {

// Base of every error raised by the library. The CLI maps subclasses to exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Argument outside the mathematical domain of an operation (negative kappa, non-finite radius, ...).
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Parameters that are individually valid but produce a degenerate setup.
class ConfigurationError : public Error {
 public:
  using Error::Error;
};

class PreconditionError : public Error {
 public:
  using Error::Error;
};

/// Input data inconsistent with what the operation needs (incompatible rhs, rank-deficient design).
class DataError : public Error {
 public:
  using Error::Error;
};

/// Iterative solver failed to converge; carries the residual trace.
class SolverError : public Error {
 public:
  SolverError(const std::string& what, std::vector<double> trace = {})
      : Error(what), trace_(std::move(trace)) {}
  const std::vector<double>& trace() const noexcept { return trace_; }

 private:
  std::vector<double> trace_;
};

class FitError : public Error {
 public:
  using Error::Error;
};

class UsageError : public Error {
 public:
  using Error::Error;
};

class VerificationError : public Error {
 public:
  using Error::Error;
};

}  // namespace patchdiff
