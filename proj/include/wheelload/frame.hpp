#pragma once

#include <array>
#include <optional>

#include <Eigen/Core>

namespace wheelload {

/// Standard gravity (m/s^2).
inline constexpr double kGravity = 9.80665;

/// One timestamped sensor sample for a single corner.
///
/// a_u is the gravity-inclusive unsprung acceleration g - a: at rest it reads
/// (0, 0, -g), during a left turn (a_y > 0) its y component is negative.
struct SensorFrame {
  double t = 0.0;
  double x_a = 0.0;     ///< rack displacement (m)
  double x_d = 0.0;     ///< spring compression sensor (m)
  double xdot_d = 0.0;  ///< compression rate (m/s), positive in bump
  Eigen::Vector3d a_u{0.0, 0.0, -kGravity};
  double slip_kappa = 0.0;  ///< longitudinal slip ratio
  double slip_alpha = 0.0;  ///< slip angle (rad)
  std::optional<double> fz_truth;

  /// The six network-visible channels: x_a, x_d, xdot_d, a_ux, a_uy, a_uz.
  std::array<double, 6> channels() const { return {x_a, x_d, xdot_d, a_u.x(), a_u.y(), a_u.z()}; }
};

inline constexpr std::size_t kFrameChannels = 6;

}  // namespace wheelload
