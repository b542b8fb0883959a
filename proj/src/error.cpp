#include "wheelload/error.hpp"

namespace wheelload {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::TravelOutOfRange: return "TravelOutOfRange";
    case ErrorCode::KinematicSingularity: return "KinematicSingularity";
    case ErrorCode::NoConvergence: return "NoConvergence";
    case ErrorCode::CoincidentPoints: return "CoincidentPoints";
    case ErrorCode::SingularEquilibrium: return "SingularEquilibrium";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::NonScalarRoot: return "NonScalarRoot";
    case ErrorCode::InsufficientSamples: return "InsufficientSamples";
    case ErrorCode::EmptyCollocationSet: return "EmptyCollocationSet";
    case ErrorCode::PhysicsUnavailable: return "PhysicsUnavailable";
    case ErrorCode::NanLoss: return "NanLoss";
    case ErrorCode::InversionFailure: return "InversionFailure";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::SchemaMismatch: return "SchemaMismatch";
    case ErrorCode::CheckpointVersion: return "CheckpointVersion";
    case ErrorCode::DatasetMismatch: return "DatasetMismatch";
    case ErrorCode::EmptySeries: return "EmptySeries";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
  }
  return "Unknown";
}

bool is_numerical(ErrorCode code) {
  switch (code) {
    case ErrorCode::KinematicSingularity:
    case ErrorCode::NoConvergence:
    case ErrorCode::SingularEquilibrium:
    case ErrorCode::NanLoss:
    case ErrorCode::InversionFailure:
    case ErrorCode::PhysicsUnavailable:
      return true;
    default:
      return false;
  }
}

}  // namespace wheelload
