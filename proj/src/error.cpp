#include "fpanel/error.hpp"

namespace fpanel {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::UnknownVariable: return "UnknownVariable";
    case ErrorCode::Io: return "Io";
    case ErrorCode::EmptyFile: return "EmptyFile";
    case ErrorCode::MalformedRow: return "MalformedRow";
    case ErrorCode::DuplicateCell: return "DuplicateCell";
    case ErrorCode::NonPositiveUnderLog: return "NonPositiveUnderLog";
    case ErrorCode::VariableMissingEverywhere: return "VariableMissingEverywhere";
    case ErrorCode::EmptyDataset: return "EmptyDataset";
    case ErrorCode::NoOffDiagonalPairs: return "NoOffDiagonalPairs";
    case ErrorCode::UnknownSubject: return "UnknownSubject";
    case ErrorCode::PointOutsideDomain: return "PointOutsideDomain";
    case ErrorCode::GridMismatch: return "GridMismatch";
    case ErrorCode::SubjectMismatch: return "SubjectMismatch";
    case ErrorCode::IndexMismatch: return "IndexMismatch";
    case ErrorCode::TooFewCurves: return "TooFewCurves";
    case ErrorCode::MissingScalar: return "MissingScalar";
    case ErrorCode::NoCompleteCases: return "NoCompleteCases";
    case ErrorCode::ZeroDenominator: return "ZeroDenominator";
    case ErrorCode::AllCandidatesDegenerate: return "AllCandidatesDegenerate";
    case ErrorCode::AsymmetricInput: return "AsymmetricInput";
    case ErrorCode::NonFiniteEntries: return "NonFiniteEntries";
    case ErrorCode::SingularSubjectCovariance: return "SingularSubjectCovariance";
    case ErrorCode::ZeroSpectrum: return "ZeroSpectrum";
    case ErrorCode::OrderTooLow: return "OrderTooLow";
    case ErrorCode::SingularSystem: return "SingularSystem";
    case ErrorCode::DegenerateTrace: return "DegenerateTrace";
    case ErrorCode::SingularNormalEquations: return "SingularNormalEquations";
    case ErrorCode::NoPenaltyCandidates: return "NoPenaltyCandidates";
    case ErrorCode::CollinearPredictors: return "CollinearPredictorsAt";
    case ErrorCode::PerfectCollinearity: return "PerfectCollinearity";
  }
  return "Unknown";
}

ErrorClass classify(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidConfig:
    case ErrorCode::InvalidArgument:
    case ErrorCode::UnknownVariable:
      return ErrorClass::Configuration;
    case ErrorCode::ZeroDenominator:
    case ErrorCode::AllCandidatesDegenerate:
    case ErrorCode::AsymmetricInput:
    case ErrorCode::NonFiniteEntries:
    case ErrorCode::SingularSubjectCovariance:
    case ErrorCode::ZeroSpectrum:
    case ErrorCode::OrderTooLow:
    case ErrorCode::SingularSystem:
    case ErrorCode::DegenerateTrace:
    case ErrorCode::SingularNormalEquations:
    case ErrorCode::NoPenaltyCandidates:
    case ErrorCode::CollinearPredictors:
    case ErrorCode::PerfectCollinearity:
      return ErrorClass::Numerical;
    default:
      return ErrorClass::Data;
  }
}

namespace {

std::string compose(ErrorCode code, const std::string& detail, const std::string& stage) {
  std::string out;
  if (!stage.empty()) out += "[" + stage + "] ";
  out += std::string(to_string(code));
  if (!detail.empty()) out += ": " + detail;
  return out;
}

}  // namespace

Error::Error(ErrorCode code, const std::string& message) : Error(code, message, std::string{}) {}

Error::Error(ErrorCode code, std::string detail, std::string stage)
    : std::runtime_error(compose(code, detail, stage)),
      code_(code),
      detail_(std::move(detail)),
      stage_(std::move(stage)) {}

Error Error::with_stage(const std::string& stage) const {
  if (!stage_.empty()) return *this;
  return Error(code_, detail_, stage);
}

void fail(ErrorCode code, const std::string& message) { throw Error(code, message); }

}  // namespace fpanel
