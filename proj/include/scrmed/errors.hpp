#pragma once

#include <exception>
#include <stdexcept>
#include <string>

namespace scrmed {

// Exit-code contract used by the CLI: InvalidInput -> 2, NumericalError -> 1.

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad user input: dimension mismatch, schema violation, degenerate data.
class InvalidInput : public Error {
 public:
  using Error::Error;
};

/// Evaluation requested past the last jump of a fitted step function.
class OutOfSupport : public InvalidInput {
 public:
  OutOfSupport(double t, double limit)
      : InvalidInput("time " + std::to_string(t) +
                     " is beyond the estimated hazard support (last jump at " +
                     std::to_string(limit) + ")"),
        t_(t),
        limit_(limit) {}
  double time() const { return t_; }
  double limit() const { return limit_; }

 private:
  double t_;
  double limit_;
};

class NumericalError : public Error {
 public:
  using Error::Error;
};

/// A subject's likelihood or every posterior mixture weight underflowed.
class UnderflowError : public NumericalError {
 public:
  UnderflowError(const std::string& subject_id, const std::string& what)
      : NumericalError(what + " (subject " + subject_id + ")"), subject_(subject_id) {}
  const std::string& subject() const { return subject_; }

 private:
  std::string subject_;
};

class DegenerateRiskSet : public NumericalError {
 public:
  DegenerateRiskSet(const std::string& scale, double jump_time)
      : NumericalError("empty weighted risk set for " + scale + " at jump time " +
                       std::to_string(jump_time)),
        jump_time_(jump_time) {}
  double jump_time() const { return jump_time_; }

 private:
  double jump_time_;
};

class SolverFailure : public NumericalError {
 public:
  SolverFailure(const std::string& what, double residual)
      : NumericalError(what + " (score norm " + std::to_string(residual) + ")"),
        residual_(residual) {}
  double residual() const { return residual_; }

 private:
  double residual_;
};

class RankDeficiency : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

/// Bootstrap lost too many resamples to be trusted.
class UnreliableInference : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

/// Messages of a nested exception chain joined with ": ".
inline std::string describe(const std::exception& e) {
  std::string msg = e.what();
  try {
    std::rethrow_if_nested(e);
  } catch (const std::exception& inner) {
    msg += ": " + describe(inner);
  } catch (...) {
  }
  return msg;
}

}  // namespace scrmed
