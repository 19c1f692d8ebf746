#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace fpanel {

enum class ErrorCode {
  // configuration
  InvalidConfig,
  InvalidArgument,
  UnknownVariable,
  // data
  Io,
  EmptyFile,
  MalformedRow,
  DuplicateCell,
  NonPositiveUnderLog,
  VariableMissingEverywhere,
  EmptyDataset,
  NoOffDiagonalPairs,
  UnknownSubject,
  PointOutsideDomain,
  GridMismatch,
  SubjectMismatch,
  IndexMismatch,
  TooFewCurves,
  MissingScalar,
  NoCompleteCases,
  // numerical
  ZeroDenominator,
  AllCandidatesDegenerate,
  AsymmetricInput,
  NonFiniteEntries,
  SingularSubjectCovariance,
  ZeroSpectrum,
  OrderTooLow,
  SingularSystem,
  DegenerateTrace,
  SingularNormalEquations,
  NoPenaltyCandidates,
  CollinearPredictors,
  PerfectCollinearity,
};

/// Broad failure class; the CLI maps it to an exit code (2, 3, 4).
enum class ErrorClass { Configuration, Data, Numerical };

std::string_view to_string(ErrorCode code);
ErrorClass classify(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message);

  ErrorCode code() const noexcept { return code_; }
  ErrorClass error_class() const noexcept { return classify(code_); }
  const std::string& stage() const noexcept { return stage_; }
  const std::string& detail() const noexcept { return detail_; }

  /// Copy of this error labelled with the pipeline stage it escaped from.
  /// An existing label is kept, so the innermost stage wins.
  Error with_stage(const std::string& stage) const;

 private:
  Error(ErrorCode code, std::string detail, std::string stage);

  ErrorCode code_;
  std::string detail_;
  std::string stage_;
};

[[noreturn]] void fail(ErrorCode code, const std::string& message);

}  // namespace fpanel
