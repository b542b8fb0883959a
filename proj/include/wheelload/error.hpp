#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace wheelload {

enum class ErrorCode {
  // kinematics
  TravelOutOfRange,
  KinematicSingularity,
  NoConvergence,
  CoincidentPoints,
  // equilibrium
  SingularEquilibrium,
  // learning
  ShapeMismatch,
  NonScalarRoot,
  InsufficientSamples,
  EmptyCollocationSet,
  PhysicsUnavailable,
  NanLoss,
  // simulation / io
  InversionFailure,
  IoError,
  SchemaMismatch,
  CheckpointVersion,
  DatasetMismatch,
  EmptySeries,
  InvalidConfig,
};

std::string_view to_string(ErrorCode code);

/// True for error codes that stem from a numerical failure rather than bad input.
bool is_numerical(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace wheelload
