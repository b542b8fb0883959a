#pragma once

// Linkage-level kinematics of a double-wishbone corner with a steering rack.
//
// Frame: x forward, y left, z up, origin at the unsprung-body CG at nominal
// ride height. The reference geometry describes a LEFT corner (wheel
// outboard at +y relative to the chassis hard points).
//
// The knuckle (s1, s2, s3, contact patch and, by default, p1) is a rigid body
// with 6 DOF. It is held by five rigid links (u1-s1, u2-s1, l1-s3, l2-s3,
// t-s2) plus the damper length |p1 - p2|, which is set by the spring
// sensor x_d. The rack moves the tie-rod inner point t along the rack axis.

#include <array>
#include <optional>
#include <string>
#include <string_view>

#include <Eigen/Core>
#include <Eigen/Geometry>

#include "wheelload/config.hpp"

namespace wheelload::geometry {

using Vec3 = Eigen::Vector3d;

enum class PointId { U1, U2, L1, L2, P1, P2, T, S1, S2, S3, Contact, CG };
inline constexpr std::size_t kPointCount = 12;

std::string_view to_string(PointId id);
PointId point_from_string(std::string_view name);

/// Where the damper's lower mount p1 lives.
enum class DamperMount {
  Knuckle,   ///< rigidly on the knuckle
  LowerArm,  ///< on the lower control arm, rotating about the l1-l2 axis
};

struct TravelBox {
  double rack = 0.05;    ///< |x_a| limit (m)
  double spring = 0.06;  ///< |x_d - x_d0| limit (m)
};

struct LinkLengths {
  double u1_s1 = 0.0;
  double u2_s1 = 0.0;
  double l1_s3 = 0.0;
  double l2_s3 = 0.0;
  double t_s2 = 0.0;
  double s1_s2 = 0.0;
  double s2_s3 = 0.0;
  double s1_s3 = 0.0;
  double damper = 0.0;  ///< |p1 - p2| at reference

  std::array<double, 8> rigid() const { return {u1_s1, u2_s1, l1_s3, l2_s3, t_s2, s1_s2, s2_s3, s1_s3}; }
};

/// Reference hard-point geometry of one corner.
///
/// x_d is the spring compression sensor: increasing x_d shortens the damper,
/// |p1 - p2| = L_ref - (x_d - x_d0).
struct SuspensionConfig {
  Vec3 u1, u2;  ///< upper control arm chassis anchors (front, rear)
  Vec3 l1, l2;  ///< lower control arm chassis anchors (front, rear)
  Vec3 p2;      ///< damper chassis anchor
  Vec3 s1, s2, s3;  ///< knuckle: upper ball joint, tie-rod joint, lower ball joint
  Vec3 p1;      ///< damper lower mount (reference position)
  Vec3 t;       ///< tie-rod inner joint at x_a = 0 (rack end)
  Vec3 rack_direction{0.0, 1.0, 0.0};
  Vec3 contact_patch;  ///< tyre contact point, carried by the knuckle
  double x_d0 = 0.0;
  DamperMount damper_mount = DamperMount::Knuckle;
  /// LowerArm mount only: p1 = lerp(midpoint(l1, l2), s3, fraction) at reference.
  double lower_arm_fraction = 0.6;
  TravelBox travel;

  /// Throws InvalidConfig when an invariant is violated.
  void validate() const;
  LinkLengths link_lengths() const;
  Vec3 reference_point(PointId id) const;

  /// Right-hand corner: hard points reflected through the x-z plane. The rack
  /// direction is chosen so that the same x_a moves the shared rack the same
  /// way physically, i.e. the mirrored corner sees -x_a for a mirrored pose.
  SuspensionConfig mirrored() const;

  /// Formula-Student-sized reference corner used as the test fixture.
  static SuspensionConfig fixture();
  /// Reads `<prefix>.u1 = [x, y, z]` etc.; missing keys fall back to the fixture.
  static SuspensionConfig from_config(const ConfigFile& cfg, const std::string& prefix = "geometry");
  /// Writes every key read by from_config.
  void to_config(ConfigFile& cfg, const std::string& prefix = "geometry") const;
};

/// Solved instantaneous geometry for a given (x_a, x_d).
struct SuspensionPose {
  std::array<Vec3, kPointCount> points{};
  double x_a = 0.0;
  double x_d = 0.0;
  int iterations = 0;
  double max_residual = 0.0;  ///< max |constraint| (m)
  double condition = 1.0;     ///< constraint Jacobian condition number at the solution
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();  ///< knuckle rotation about its reference centroid
  Vec3 translation = Vec3::Zero();

  const Vec3& point(PointId id) const { return points[static_cast<std::size_t>(id)]; }
  Vec3& point(PointId id) { return points[static_cast<std::size_t>(id)]; }
};

struct PoseSolverOptions {
  int max_iterations = 100;
  double tolerance = 1e-13;      ///< target max residual (m)
  double accept_residual = 1e-8; ///< success threshold when the iteration stagnates
  double max_condition = 1e12;
};

/// Cold start from the reference geometry; deterministic.
SuspensionPose solve_pose(const SuspensionConfig& config, double x_a, double x_d,
                          const PoseSolverOptions& options = {});

/// Warm-started solve: Newton begins at `start`'s knuckle transform, which
/// keeps consecutive solves on the same assembly branch.
SuspensionPose solve_pose_from(const SuspensionConfig& config, const SuspensionPose& start, double x_a,
                               double x_d, const PoseSolverOptions& options = {});

/// Owns a warm-start cache. Not meant to be shared between threads.
class KinematicsSolver {
 public:
  explicit KinematicsSolver(SuspensionConfig config, PoseSolverOptions options = {});

  SuspensionPose solve(double x_a, double x_d);
  void reset() { last_.reset(); }
  const SuspensionConfig& config() const { return config_; }

 private:
  SuspensionConfig config_;
  PoseSolverOptions options_;
  std::optional<SuspensionPose> last_;
};

/// Unit vector from point i to point j. Throws CoincidentPoints below 1e-9 m.
Vec3 direction_vector(const SuspensionPose& pose, PointId i, PointId j);

/// Vector from the CG (frame origin) to point i.
Vec3 lever_arm(const SuspensionPose& pose, PointId i);

/// Current rigid-link lengths, in the LinkLengths order.
LinkLengths measure_links(const SuspensionPose& pose);

/// Diagnostics printed by `geometry check`.
struct GeometryReport {
  LinkLengths lengths;
  double knuckle_area = 0.0;          ///< area of triangle s1 s2 s3 (m^2)
  double reference_condition = 0.0;   ///< constraint Jacobian condition at rest
  double worst_condition = 0.0;       ///< max over a grid of the travel box
  double singularity_margin = 0.0;    ///< log10(limit / worst_condition)
};

GeometryReport check_geometry(const SuspensionConfig& config, int grid = 9);

}  // namespace wheelload::geometry
