#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace plaquemech {

enum class ErrorCode {
  // case_io
  MissingFile,
  HeaderMismatch,
  InvariantViolation,
  IoFailure,
  IndexOutOfRange,
  // config
  UnknownConfigKey,
  ConfigParse,
  // plaque_gmm
  EmptySampleSet,
  NonFiniteLikelihood,
  PreconditionViolation,
  // cross_section_mesh
  ContourCrossing,
  DegenerateElement,
  NoSamplesForSlice,
  // constitutive / fe_solver
  NonPositiveJacobian,
  DivergedNewton,
  SingularSystem,
  AbortedStep,
  // stress_analysis
  NonSymmetric,
  UnconvergedState,
  EmptyInput,
  // isr_correlation
  ZeroReference,
  MissingDiameter,
  ConstantInput,
  LengthMismatch,
};

constexpr std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::MissingFile: return "MissingFile";
    case ErrorCode::HeaderMismatch: return "HeaderMismatch";
    case ErrorCode::InvariantViolation: return "InvariantViolation";
    case ErrorCode::IoFailure: return "IoFailure";
    case ErrorCode::IndexOutOfRange: return "IndexOutOfRange";
    case ErrorCode::UnknownConfigKey: return "UnknownConfigKey";
    case ErrorCode::ConfigParse: return "ConfigParse";
    case ErrorCode::EmptySampleSet: return "EmptySampleSet";
    case ErrorCode::NonFiniteLikelihood: return "NonFiniteLikelihood";
    case ErrorCode::PreconditionViolation: return "PreconditionViolation";
    case ErrorCode::ContourCrossing: return "ContourCrossing";
    case ErrorCode::DegenerateElement: return "DegenerateElement";
    case ErrorCode::NoSamplesForSlice: return "NoSamplesForSlice";
    case ErrorCode::NonPositiveJacobian: return "NonPositiveJacobian";
    case ErrorCode::DivergedNewton: return "DivergedNewton";
    case ErrorCode::SingularSystem: return "SingularSystem";
    case ErrorCode::AbortedStep: return "AbortedStep";
    case ErrorCode::NonSymmetric: return "NonSymmetric";
    case ErrorCode::UnconvergedState: return "UnconvergedState";
    case ErrorCode::EmptyInput: return "EmptyInput";
    case ErrorCode::ZeroReference: return "ZeroReference";
    case ErrorCode::MissingDiameter: return "MissingDiameter";
    case ErrorCode::ConstantInput: return "ConstantInput";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
  }
  return "Unknown";
}

/// Structured library error. Every failure path in plaquemech throws this
/// type; `code()` identifies the failure class, `what()` carries the detail.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& detail)
      : std::runtime_error(std::string(to_string(code)) + ": " + detail), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

/// Error inputs (bad files, bad config, bad arguments) vs everything else.
inline bool is_input_error(ErrorCode code) {
  switch (code) {
    case ErrorCode::MissingFile:
    case ErrorCode::HeaderMismatch:
    case ErrorCode::InvariantViolation:
    case ErrorCode::IndexOutOfRange:
    case ErrorCode::UnknownConfigKey:
    case ErrorCode::ConfigParse:
    case ErrorCode::PreconditionViolation:
    case ErrorCode::MissingDiameter:
    case ErrorCode::LengthMismatch:
    case ErrorCode::EmptySampleSet:
    case ErrorCode::EmptyInput:
    case ErrorCode::ZeroReference:
    case ErrorCode::ContourCrossing:
    case ErrorCode::NoSamplesForSlice:
      return true;
    default:
      return false;
  }
}

}  // namespace plaquemech
