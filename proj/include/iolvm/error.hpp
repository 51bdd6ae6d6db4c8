#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace iolvm {

enum class ErrorCode {
  // graph-core
  DuplicateNode,
  DanglingEdge,
  SelfLoop,
  DuplicateEdge,
  NonDenseIds,
  LengthMismatch,
  EmptyInput,
  InvalidRequirement,
  // solvers
  NoPathExists,
  NoFeasibleSolution,
  GraphTooLargeForExact,
  GraphTooLargeForBruteForce,
  RequirementMismatch,
  NonFiniteCost,
  // neural / model
  DimensionMismatch,
  StaleCache,
  ShapeMismatch,
  NonPositiveSigma,
  InfeasibleSample,
  NumericalFailure,
  // inference / eval
  InvalidTau,
  NotNormalized,
  EmptyGroundTruth,
  // datagen / io
  DisconnectedBeyondThreshold,
  ParseError,
  InfeasibleRecord,
  GraphMismatch,
  ConfigError,
  IoError,
};

/// Coarse classification used for process exit codes.
enum class ErrorCategory { Config, Data, Numerical };

std::string_view to_string(ErrorCode code);
ErrorCategory category_of(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }
  ErrorCategory category() const noexcept { return category_of(code_); }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) {
  throw Error(code, what);
}

}  // namespace iolvm
