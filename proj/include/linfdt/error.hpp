#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace linfdt {

enum class ErrorCode {
  // dataset
  BadMagic,
  TruncatedFile,
  CountMismatch,
  BadRecordSize,
  LabelOutOfRange,
  CropTooLarge,
  NonPositiveDefiniteCovariance,
  // moments
  EmptyDataset,
  BatchTooLarge,
  SingularAfterRidge,
  // dynamics
  ShapeMismatch,
  NonFiniteUpdate,
  ZeroNorm,
  NoConvergence,
  // ou oracle
  UnstableDrift,
  IllConditioned,
  UnstableDiscretization,
  NonPsdDiffusion,
  ZeroDiffusion,
  // fdt
  EmptyTrajectory,
  ZeroDhat,
  IndexOutOfRange,
  // spectrum
  NotSquare,
  ZeroDcComponent,
  // cnn
  FilterTooLarge,
  // plumbing
  InvalidArgument,
  Io,
  BadContainer,
  FingerprintMismatch,
  SchemaViolation,
};

std::string_view to_string(ErrorCode code);

/// All library failures are reported through this exception; `code()` lets
/// callers (and the CLI exit-code mapping) branch without parsing messages.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace linfdt
