#include "iolvm/error.hpp"

namespace iolvm {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::DuplicateNode: return "DuplicateNode";
    case ErrorCode::DanglingEdge: return "DanglingEdge";
    case ErrorCode::SelfLoop: return "SelfLoop";
    case ErrorCode::DuplicateEdge: return "DuplicateEdge";
    case ErrorCode::NonDenseIds: return "NonDenseIds";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::EmptyInput: return "EmptyInput";
    case ErrorCode::InvalidRequirement: return "InvalidRequirement";
    case ErrorCode::NoPathExists: return "NoPathExists";
    case ErrorCode::NoFeasibleSolution: return "NoFeasibleSolution";
    case ErrorCode::GraphTooLargeForExact: return "GraphTooLargeForExact";
    case ErrorCode::GraphTooLargeForBruteForce: return "GraphTooLargeForBruteForce";
    case ErrorCode::RequirementMismatch: return "RequirementMismatch";
    case ErrorCode::NonFiniteCost: return "NonFiniteCost";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::StaleCache: return "StaleCache";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::NonPositiveSigma: return "NonPositiveSigma";
    case ErrorCode::InfeasibleSample: return "InfeasibleSample";
    case ErrorCode::NumericalFailure: return "NumericalFailure";
    case ErrorCode::InvalidTau: return "InvalidTau";
    case ErrorCode::NotNormalized: return "NotNormalized";
    case ErrorCode::EmptyGroundTruth: return "EmptyGroundTruth";
    case ErrorCode::DisconnectedBeyondThreshold: return "DisconnectedBeyondThreshold";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::InfeasibleRecord: return "InfeasibleRecord";
    case ErrorCode::GraphMismatch: return "GraphMismatch";
    case ErrorCode::ConfigError: return "ConfigError";
    case ErrorCode::IoError: return "IoError";
  }
  return "Unknown";
}

ErrorCategory category_of(ErrorCode code) {
  switch (code) {
    case ErrorCode::ConfigError:
    case ErrorCode::InvalidTau:
    case ErrorCode::GraphTooLargeForExact:
    case ErrorCode::GraphTooLargeForBruteForce:
    case ErrorCode::RequirementMismatch:
      return ErrorCategory::Config;
    case ErrorCode::NonFiniteCost:
    case ErrorCode::NumericalFailure:
    case ErrorCode::NonPositiveSigma:
    case ErrorCode::NotNormalized:
      return ErrorCategory::Numerical;
    default:
      return ErrorCategory::Data;
  }
}

}  // namespace iolvm
