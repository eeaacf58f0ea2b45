#pragma once

#include <stdexcept>
#include <string>

namespace wmflow {

enum class ErrorCode {
  NonConcaveMobility,
  NonPositiveMobility,
  DivergentIntegral,
  OutOfRange,
  DerivativeVanishes,
  DeltaTooLarge,
  Infeasible,
  MassMismatch,
  NoConvergence,
  InnerDivergence,
  StepRejected,
  ScheduleNotDecreasing,
  NewtonFailure,
  GridMismatch,
  InvalidArgument,
  ParseError,
};

inline const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::NonConcaveMobility: return "NonConcaveMobility";
    case ErrorCode::NonPositiveMobility: return "NonPositiveMobility";
    case ErrorCode::DivergentIntegral: return "DivergentIntegral";
    case ErrorCode::OutOfRange: return "OutOfRange";
    case ErrorCode::DerivativeVanishes: return "DerivativeVanishes";
    case ErrorCode::DeltaTooLarge: return "DeltaTooLarge";
    case ErrorCode::Infeasible: return "Infeasible";
    case ErrorCode::MassMismatch: return "MassMismatch";
    case ErrorCode::NoConvergence: return "NoConvergence";
    case ErrorCode::InnerDivergence: return "InnerDivergence";
    case ErrorCode::StepRejected: return "StepRejected";
    case ErrorCode::ScheduleNotDecreasing: return "ScheduleNotDecreasing";
    case ErrorCode::NewtonFailure: return "NewtonFailure";
    case ErrorCode::GridMismatch: return "GridMismatch";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::ParseError: return "ParseError";
  }
  return "Unknown";
}

/// Exception carrying a machine-readable code alongside the message.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace wmflow
