#include "ddm/error.hpp"

namespace ddm {

std::string_view to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::NotSquare: return "NotSquare";
    case ErrorKind::NegativeOffDiagonal: return "NegativeOffDiagonal";
    case ErrorKind::ColumnSumNonzero: return "ColumnSumNonzero";
    case ErrorKind::TooLarge: return "TooLarge";
    case ErrorKind::POutOfRange: return "POutOfRange";
    case ErrorKind::InvalidArgument: return "InvalidArgument";
    case ErrorKind::NegativeTime: return "NegativeTime";
    case ErrorKind::ZeroDenominator: return "ZeroDenominator";
    case ErrorKind::SupportMismatch: return "SupportMismatch";
    case ErrorKind::EigenFailure: return "EigenFailure";
    case ErrorKind::NotSymmetric: return "NotSymmetric";
    case ErrorKind::Disconnected: return "Disconnected";
    case ErrorKind::LengthMismatch: return "LengthMismatch";
    case ErrorKind::NonPositiveEntry: return "NonPositiveEntry";
    case ErrorKind::OptimizationDiverged: return "OptimizationDiverged";
    case ErrorKind::NonPositiveRho: return "NonPositiveRho";
    case ErrorKind::NonConstantDegree: return "NonConstantDegree";
    case ErrorKind::TooLargeForExact: return "TooLargeForExact";
    case ErrorKind::BoundViolated: return "BoundViolated";
    case ErrorKind::NonPositiveRatio: return "NonPositiveRatio";
    case ErrorKind::EmptyGrid: return "EmptyGrid";
    case ErrorKind::StepUnderflow: return "StepUnderflow";
    case ErrorKind::NonPositiveScore: return "NonPositiveScore";
    case ErrorKind::Diverged: return "Diverged";
    case ErrorKind::UnknownKey: return "UnknownKey";
    case ErrorKind::OutOfRange: return "OutOfRange";
    case ErrorKind::MissingFile: return "MissingFile";
    case ErrorKind::Io: return "Io";
  }
  return "Unknown";
}

Error::Error(ErrorKind kind, const std::string& detail)
    : std::runtime_error(std::string(to_string(kind)) + ": " + detail), kind_(kind) {}

}  // namespace ddm
