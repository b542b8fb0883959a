#pragma once

// Force/moment equilibrium of the unsprung body (wheel + knuckle).
//
// Sign conventions:
//  * link magnitudes are signed; column j of F_sus is magnitude_j times the
//    unit direction of link j (p2->p1, u1->s1, u2->s1, t->s2, l1->s3, l2->s3)
//    and is the force the link applies to the knuckle;
//  * F_p > 0 compresses the spring and pushes p1 away from p2;
//  * (F_x, F_y, F_z) is the road's contact force on the tyre, expressed in the
//    ground axes; F_z > 0 is the wheel load. The force the wheel transmits to
//    the road is its negative.
//  * a_u is gravity-inclusive (g - a), beta_u likewise is -(angular accel).
//
// Balance about the CG (frame origin):
//   sum F_i + m_u a_u + F_contact = 0
//   sum M_i + I_u beta_u + r_cp x F_contact + M_wheel = 0

#include <array>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "wheelload/config.hpp"
#include "wheelload/frame.hpp"
#include "wheelload/geometry.hpp"

namespace wheelload::dynamics {

using geometry::Vec3;
using ForceSystem = Eigen::Matrix<double, 3, 6>;

struct UnsprungBody {
  double mass = 12.0;  ///< kg
  Eigen::Matrix3d inertia = Eigen::Vector3d(0.25, 0.35, 0.25).asDiagonal();  ///< about CG (kg m^2)

  void validate() const;
};

/// Coil-over law: F_p = preload + k (x_d - x_d0) + damper(xdot_d).
struct SpringDamperCurve {
  double stiffness = 30000.0;  ///< N/m
  double preload = 0.0;        ///< N at x_d0
  /// (compression velocity m/s, force N), strictly increasing velocity,
  /// through (0, 0). Linear extrapolation past the end points.
  std::vector<std::pair<double, double>> damper{{-1.0, -1590.0}, {-0.3, -750.0}, {0.0, 0.0}, {0.3, 450.0}, {1.0, 1010.0}};

  void validate() const;
  double damper_force(double xdot_d) const;

  /// Two-slope damper: bump slope for xdot_d > 0, rebound slope for xdot_d < 0.
  static SpringDamperCurve bilinear(double stiffness, double preload, double bump_slope, double rebound_slope);
};

double spring_damper_force(const SpringDamperCurve& curve, double x_d0, double x_d, double xdot_d);

enum class TireChannel { Longitudinal, Lateral };

struct MagicFormulaParams {
  struct Coefficients {
    double B = 10.0;  ///< stiffness factor
    double C = 1.6;   ///< shape factor
    double D = 1.3;   ///< peak factor, ratio of F_z
    double E = 0.0;   ///< curvature factor, |E| < 1
  };
  Coefficients longitudinal{10.0, 1.65, 1.3, 0.1};
  Coefficients lateral{8.0, 1.4, 1.4, -0.2};

  void validate() const;
  const Coefficients& channel(TireChannel ch) const { return ch == TireChannel::Longitudinal ? longitudinal : lateral; }
};

/// D F_z sin(C atan(B s - E (B s - atan(B s)))).
double magic_formula(const MagicFormulaParams& params, double fz, double slip, TireChannel channel);

/// Everything needed to evaluate one corner.
struct CornerModel {
  geometry::SuspensionConfig geometry = geometry::SuspensionConfig::fixture();
  UnsprungBody body;
  SpringDamperCurve spring;
  MagicFormulaParams tire;
  /// Road axes (columns: longitudinal, lateral, normal) in the corner frame.
  Eigen::Matrix3d ground_axes = Eigen::Matrix3d::Identity();
  /// Newton starting value for F_z (N).
  double static_load_guess = 800.0;

  void validate() const;
  static CornerModel fixture();
  /// Reads geometry.*, body.*, spring.*, damper.*, tire.* keys.
  static CornerModel from_config(const ConfigFile& cfg);
  void to_config(ConfigFile& cfg) const;
};

struct LoadInputs {
  double x_a = 0.0;
  double x_d = 0.0;
  double xdot_d = 0.0;
  Vec3 a_u{0.0, 0.0, -kGravity};
  double slip_kappa = 0.0;
  double slip_alpha = 0.0;
  Vec3 beta_u = Vec3::Zero();  ///< optional channel, neglected by default
  double wheel_torque = 0.0;   ///< M_y, brake/drive torque about the axle (N m)

  static LoadInputs from_frame(const SensorFrame& frame);
};

enum Link : int { kSpring = 0, kUpper1, kUpper2, kTieRod, kLower1, kLower2 };

struct WheelLoadSolution {
  /// F_p, F_u1, F_u2, F_t, F_l1, F_l2 (N).
  std::array<double, 6> magnitudes{};
  Vec3 tire_force = Vec3::Zero();    ///< (F_x, F_y, F_z) as solved, in ground axes
  Vec3 wheel_moment = Vec3::Zero();  ///< (M_x, M_y, M_z)
  double fz = 0.0;       ///< published load, clamped at 0
  double fz_raw = 0.0;   ///< unclamped Newton result
  bool negative_load = false;
  double force_residual = 0.0;   ///< inf-norm (N)
  double moment_residual = 0.0;  ///< inf-norm (N m)
  int iterations = 0;
  double condition = 0.0;
};

struct EquilibriumOptions {
  int max_iterations = 50;
  double tolerance = 1e-6;   ///< residual inf-norm accepted as converged
  double max_condition = 1e12;
};

/// Column j = magnitude_j * unit direction of link j.
ForceSystem assemble_force_system(const geometry::SuspensionPose& pose, const std::array<double, 6>& magnitudes);

/// Column j = lever arm of the link's chassis-side point (p2, u1, u2, t, l1, l2) x F_sus column j.
ForceSystem assemble_moment_system(const geometry::SuspensionPose& pose, const ForceSystem& forces);

/// Unit link directions in F_sus column order.
ForceSystem link_directions(const geometry::SuspensionPose& pose);

WheelLoadSolution solve_wheel_load(const CornerModel& model, const geometry::SuspensionPose& pose,
                                   const LoadInputs& inputs, const EquilibriumOptions& options = {});

/// Convenience: solves the pose first.
WheelLoadSolution solve_wheel_load(const CornerModel& model, const LoadInputs& inputs,
                                   const EquilibriumOptions& options = {});

/// Residual of both balances for a given solution; (force inf-norm, moment inf-norm).
std::pair<double, double> equilibrium_residual(const CornerModel& model, const geometry::SuspensionPose& pose,
                                               const LoadInputs& inputs, const WheelLoadSolution& solution);

/// Published wheel load for one sensor frame: pose -> spring force -> equilibrium.
double physics_estimate(const CornerModel& model, const SensorFrame& frame);

}  // namespace wheelload::dynamics
