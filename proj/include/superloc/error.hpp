#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace superloc {

enum class ErrorCode {
  UnboundSymbol,
  ParseError,
  DimensionMismatch,
  IndexOutOfRange,
  ZeroBody,
  ShapeMismatch,
  NotTautological,
  OddComplexDimension,
  NotLinearInTheta,
  NotInjective,
  NotAZero,
  NonIsolatedZero,
  NoConvergence,
  OddSize,
  NotSkew,
  SingularFiberBlock,
  NotClosed,
  NotQClosed,
  BRSTInvalid,
  OddDimension,
  SingularLinearization,
  DegenerateField,
  NonInvertibleQBeta,
  WrongGrade,
  AssumptionViolated,
  NotUnitary,
  NonlinearTtilde,
  BadSusy,
  StabilizerNotTrivial,
  SchemaError,
  DivisionByZero,
};

constexpr std::string_view to_string(ErrorCode c) {
  switch (c) {
    case ErrorCode::UnboundSymbol: return "UnboundSymbol";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::IndexOutOfRange: return "IndexOutOfRange";
    case ErrorCode::ZeroBody: return "ZeroBody";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::NotTautological: return "NotTautological";
    case ErrorCode::OddComplexDimension: return "OddComplexDimension";
    case ErrorCode::NotLinearInTheta: return "NotLinearInTheta";
    case ErrorCode::NotInjective: return "NotInjective";
    case ErrorCode::NotAZero: return "NotAZero";
    case ErrorCode::NonIsolatedZero: return "NonIsolatedZero";
    case ErrorCode::NoConvergence: return "NoConvergence";
    case ErrorCode::OddSize: return "OddSize";
    case ErrorCode::NotSkew: return "NotSkew";
    case ErrorCode::SingularFiberBlock: return "SingularFiberBlock";
    case ErrorCode::NotClosed: return "NotClosed";
    case ErrorCode::NotQClosed: return "NotQClosed";
    case ErrorCode::BRSTInvalid: return "BRSTInvalid";
    case ErrorCode::OddDimension: return "OddDimension";
    case ErrorCode::SingularLinearization: return "SingularLinearization";
    case ErrorCode::DegenerateField: return "DegenerateField";
    case ErrorCode::NonInvertibleQBeta: return "NonInvertibleQBeta";
    case ErrorCode::WrongGrade: return "WrongGrade";
    case ErrorCode::AssumptionViolated: return "AssumptionViolated";
    case ErrorCode::NotUnitary: return "NotUnitary";
    case ErrorCode::NonlinearTtilde: return "NonlinearTtilde";
    case ErrorCode::BadSusy: return "BadSusy";
    case ErrorCode::StabilizerNotTrivial: return "StabilizerNotTrivial";
    case ErrorCode::SchemaError: return "SchemaError";
    case ErrorCode::DivisionByZero: return "DivisionByZero";
  }
  return "Unknown";
}

/// Every failure raised by the library carries one of the codes above.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace superloc
