#include "linfdt/error.hpp"

namespace linfdt {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::BadMagic: return "BadMagic";
    case ErrorCode::TruncatedFile: return "TruncatedFile";
    case ErrorCode::CountMismatch: return "CountMismatch";
    case ErrorCode::BadRecordSize: return "BadRecordSize";
    case ErrorCode::LabelOutOfRange: return "LabelOutOfRange";
    case ErrorCode::CropTooLarge: return "CropTooLarge";
    case ErrorCode::NonPositiveDefiniteCovariance: return "NonPositiveDefiniteCovariance";
    case ErrorCode::EmptyDataset: return "EmptyDataset";
    case ErrorCode::BatchTooLarge: return "BatchTooLarge";
    case ErrorCode::SingularAfterRidge: return "SingularAfterRidge";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::NonFiniteUpdate: return "NonFiniteUpdate";
    case ErrorCode::ZeroNorm: return "ZeroNorm";
    case ErrorCode::NoConvergence: return "NoConvergence";
    case ErrorCode::UnstableDrift: return "UnstableDrift";
    case ErrorCode::IllConditioned: return "IllConditioned";
    case ErrorCode::UnstableDiscretization: return "UnstableDiscretization";
    case ErrorCode::NonPsdDiffusion: return "NonPsdDiffusion";
    case ErrorCode::ZeroDiffusion: return "ZeroDiffusion";
    case ErrorCode::EmptyTrajectory: return "EmptyTrajectory";
    case ErrorCode::ZeroDhat: return "ZeroDhat";
    case ErrorCode::IndexOutOfRange: return "IndexOutOfRange";
    case ErrorCode::NotSquare: return "NotSquare";
    case ErrorCode::ZeroDcComponent: return "ZeroDcComponent";
    case ErrorCode::FilterTooLarge: return "FilterTooLarge";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::Io: return "Io";
    case ErrorCode::BadContainer: return "BadContainer";
    case ErrorCode::FingerprintMismatch: return "FingerprintMismatch";
    case ErrorCode::SchemaViolation: return "SchemaViolation";
  }
  return "Unknown";
}

}  // namespace linfdt
