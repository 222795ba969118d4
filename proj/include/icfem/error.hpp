#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace icfem {

enum class ErrorCode {
  DiagonalZero,
  IndexOutOfRange,
  DuplicatePair,
  NotPositiveDefinite,
  SingularNormalEquations,
  DomainError,
  DegenerateDraw,
  DegenerateWeight,
  ScheduleError,
  ValueOutOfRange,
  DimensionMismatch,
  ParseError,
};

std::string_view to_string(ErrorCode code);

/// Error raised by every module of the library. The code identifies the
/// failure class; the message carries the module-level context.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::DiagonalZero: return "DiagonalZero";
    case ErrorCode::IndexOutOfRange: return "IndexOutOfRange";
    case ErrorCode::DuplicatePair: return "DuplicatePair";
    case ErrorCode::NotPositiveDefinite: return "NotPositiveDefinite";
    case ErrorCode::SingularNormalEquations: return "SingularNormalEquations";
    case ErrorCode::DomainError: return "DomainError";
    case ErrorCode::DegenerateDraw: return "DegenerateDraw";
    case ErrorCode::DegenerateWeight: return "DegenerateWeight";
    case ErrorCode::ScheduleError: return "ScheduleError";
    case ErrorCode::ValueOutOfRange: return "ValueOutOfRange";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::ParseError: return "ParseError";
  }
  return "Unknown";
}

}  // namespace icfem
