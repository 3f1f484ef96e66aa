#pragma once

#include <Eigen/Dense>

#include <optional>
#include <stdexcept>
#include <string>

namespace npfuse {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

// Error taxonomy shared across modules. Every throwing operation names one of
// these codes so callers (and tests) can dispatch without string matching.
enum class Err {
  DuplicateId,
  MissingField,
  EmptySample,
  LengthMismatch,
  DimensionMismatch,
  SingularDesign,
  SingularJacobian,
  SingularMatrix,
  Underdetermined,
  Separation,
  SingleClass,
  NoConvergence,
  ChainDegenerate,
  ResponseOutOfRange,
  OutOfRange,
  DrawCountMismatch,
  MissingPirDraws,
  MissingN,
  ZeroWeightSum,
  ZeroTruth,
  TooFewDraws,
  DegenerateVariance,
  Infeasible,
  CalibrationFailed,
  ClusterTooSmall,
  EstimatorFailed,
  ConfigInvalid,
  CsvParse,
};

inline const char* err_name(Err e) {
  switch (e) {
    case Err::DuplicateId: return "DuplicateId";
    case Err::MissingField: return "MissingField";
    case Err::EmptySample: return "EmptySample";
    case Err::LengthMismatch: return "LengthMismatch";
    case Err::DimensionMismatch: return "DimensionMismatch";
    case Err::SingularDesign: return "SingularDesign";
    case Err::SingularJacobian: return "SingularJacobian";
    case Err::SingularMatrix: return "SingularMatrix";
    case Err::Underdetermined: return "Underdetermined";
    case Err::Separation: return "Separation";
    case Err::SingleClass: return "SingleClass";
    case Err::NoConvergence: return "NoConvergence";
    case Err::ChainDegenerate: return "ChainDegenerate";
    case Err::ResponseOutOfRange: return "ResponseOutOfRange";
    case Err::OutOfRange: return "OutOfRange";
    case Err::DrawCountMismatch: return "DrawCountMismatch";
    case Err::MissingPirDraws: return "MissingPirDraws";
    case Err::MissingN: return "MissingN";
    case Err::ZeroWeightSum: return "ZeroWeightSum";
    case Err::ZeroTruth: return "ZeroTruth";
    case Err::TooFewDraws: return "TooFewDraws";
    case Err::DegenerateVariance: return "DegenerateVariance";
    case Err::Infeasible: return "Infeasible";
    case Err::CalibrationFailed: return "CalibrationFailed";
    case Err::ClusterTooSmall: return "ClusterTooSmall";
    case Err::EstimatorFailed: return "EstimatorFailed";
    case Err::ConfigInvalid: return "ConfigInvalid";
    case Err::CsvParse: return "CsvParse";
  }
  return "Unknown";
}

class Error : public std::runtime_error {
 public:
  Error(Err code, const std::string& what)
      : std::runtime_error(std::string(err_name(code)) + ": " + what), code_(code) {}
  Err code() const { return code_; }

 private:
  Err code_;
};

[[noreturn]] inline void fail(Err code, const std::string& what) { throw Error(code, what); }

inline void require(bool cond, Err code, const std::string& what) {
  if (!cond) fail(code, what);
}

}  // namespace npfuse
