#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace ddm {

enum class ErrorKind {
  NotSquare,
  NegativeOffDiagonal,
  ColumnSumNonzero,
  TooLarge,
  POutOfRange,
  InvalidArgument,
  NegativeTime,
  ZeroDenominator,
  SupportMismatch,
  EigenFailure,
  NotSymmetric,
  Disconnected,
  LengthMismatch,
  NonPositiveEntry,
  OptimizationDiverged,
  NonPositiveRho,
  NonConstantDegree,
  TooLargeForExact,
  BoundViolated,
  NonPositiveRatio,
  EmptyGrid,
  StepUnderflow,
  NonPositiveScore,
  Diverged,
  UnknownKey,
  OutOfRange,
  MissingFile,
  Io,
};

std::string_view to_string(ErrorKind kind) noexcept;

/// Every failure in the library is reported through this exception; `kind()`
/// identifies the violated contract and `what()` carries the human-readable
/// detail (offending key, column, time, ...).
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& detail);

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace ddm
