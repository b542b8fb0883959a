#include "wheelload/geometry.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Dense>

#include "wheelload/error.hpp"

namespace wheelload::geometry {
namespace {

using Vec6 = Eigen::Matrix<double, 6, 1>;
using Mat6 = Eigen::Matrix<double, 6, 6>;

constexpr std::array<std::string_view, kPointCount> kPointNames = {
    "u1", "u2", "l1", "l2", "p1", "p2", "t", "s1", "s2", "s3", "contact", "cg"};

Vec3 knuckle_centroid(const SuspensionConfig& c) { return (c.s1 + c.s2 + c.s3) / 3.0; }

Eigen::Matrix3d exp_so3(const Vec3& w) {
  const double angle = w.norm();
  if (angle == 0.0) return Eigen::Matrix3d::Identity();
  return Eigen::AngleAxisd(angle, w / angle).toRotationMatrix();
}

/// Signed rotation about `axis` (unit) taking `from` to `to`, both measured
/// perpendicular to the axis.
double axis_angle(const Vec3& axis, const Vec3& from, const Vec3& to) {
  const Vec3 a = from - axis * axis.dot(from);
  const Vec3 b = to - axis * axis.dot(to);
  return std::atan2(axis.dot(a.cross(b)), a.dot(b));
}

struct Evaluated {
  std::array<Vec3, kPointCount> points;
  Vec6 residual;
};

class ConstraintSystem {
 public:
  ConstraintSystem(const SuspensionConfig& config, double x_a, double x_d)
      : cfg_(config), lengths_(config.link_lengths()), centroid_(knuckle_centroid(config)) {
    damper_target_ = lengths_.damper - (x_d - config.x_d0);
    t_ = config.t + x_a * config.rack_direction;
    lca_axis_ = (config.l2 - config.l1).normalized();
  }

  Evaluated evaluate(const Eigen::Matrix3d& R, const Vec3& d) const {
    Evaluated e;
    auto& p = e.points;
    auto carry = [&](const Vec3& q) -> Vec3 { return R * (q - centroid_) + centroid_ + d; };
    for (std::size_t i = 0; i < kPointCount; ++i) p[i] = cfg_.reference_point(static_cast<PointId>(i));
    set(p, PointId::S1, carry(cfg_.s1));
    set(p, PointId::S2, carry(cfg_.s2));
    set(p, PointId::S3, carry(cfg_.s3));
    set(p, PointId::Contact, carry(cfg_.contact_patch));
    set(p, PointId::T, t_);
    if (cfg_.damper_mount == DamperMount::Knuckle) {
      set(p, PointId::P1, carry(cfg_.p1));
    } else {
      const double theta = axis_angle(lca_axis_, cfg_.s3 - cfg_.l1, get(p, PointId::S3) - cfg_.l1);
      const Eigen::AngleAxisd arm(theta, lca_axis_);
      set(p, PointId::P1, Vec3(arm * (cfg_.p1 - cfg_.l1) + cfg_.l1));
    }
    const Vec3& s1 = get(p, PointId::S1);
    const Vec3& s2 = get(p, PointId::S2);
    const Vec3& s3 = get(p, PointId::S3);
    e.residual << (s1 - cfg_.u1).norm() - lengths_.u1_s1, (s1 - cfg_.u2).norm() - lengths_.u2_s1,
        (s3 - cfg_.l1).norm() - lengths_.l1_s3, (s3 - cfg_.l2).norm() - lengths_.l2_s3,
        (s2 - t_).norm() - lengths_.t_s2, (get(p, PointId::P1) - cfg_.p2).norm() - damper_target_;
    return e;
  }

  /// Jacobian of the residual w.r.t. a world-frame twist about the current
  /// knuckle centroid: (rotation increment, translation increment).
  Mat6 jacobian(const Eigen::Matrix3d& R, const Vec3& d) const {
    constexpr double h = 1e-7;
    Mat6 J;
    for (int k = 0; k < 6; ++k) {
      Vec6 xi = Vec6::Zero();
      xi[k] = h;
      const Vec6 plus = perturbed(R, d, xi).residual;
      xi[k] = -h;
      const Vec6 minus = perturbed(R, d, xi).residual;
      J.col(k) = (plus - minus) / (2.0 * h);
    }
    return J;
  }

  Evaluated perturbed(const Eigen::Matrix3d& R, const Vec3& d, const Vec6& xi) const {
    Eigen::Matrix3d R2;
    Vec3 d2;
    apply(R, d, xi, R2, d2);
    return evaluate(R2, d2);
  }

  static void apply(const Eigen::Matrix3d& R, const Vec3& d, const Vec6& xi, Eigen::Matrix3d& R_out,
                    Vec3& d_out) {
    R_out = exp_so3(xi.head<3>()) * R;
    d_out = d + xi.tail<3>();
  }

 private:
  static void set(std::array<Vec3, kPointCount>& p, PointId id, const Vec3& v) {
    p[static_cast<std::size_t>(id)] = v;
  }
  static const Vec3& get(const std::array<Vec3, kPointCount>& p, PointId id) {
    return p[static_cast<std::size_t>(id)];
  }

  const SuspensionConfig& cfg_;
  LinkLengths lengths_;
  Vec3 centroid_;
  Vec3 t_;
  Vec3 lca_axis_;
  double damper_target_ = 0.0;
};

double condition_number(const Mat6& J) {
  Eigen::JacobiSVD<Mat6> svd(J);
  const auto& s = svd.singularValues();
  if (s[5] == 0.0) return std::numeric_limits<double>::infinity();
  return s[0] / s[5];
}

void check_travel(const SuspensionConfig& c, double x_a, double x_d) {
  if (!std::isfinite(x_a) || !std::isfinite(x_d) || std::abs(x_a) > c.travel.rack ||
      std::abs(x_d - c.x_d0) > c.travel.spring) {
    throw Error(ErrorCode::TravelOutOfRange, "(x_a=" + format_double(x_a) + ", x_d=" + format_double(x_d) +
                                                 ") outside travel box rack=" + format_double(c.travel.rack) +
                                                 " spring=" + format_double(c.travel.spring));
  }
}

SuspensionPose newton(const SuspensionConfig& config, Eigen::Matrix3d R, Vec3 d, double x_a, double x_d,
                      const PoseSolverOptions& opt) {
  check_travel(config, x_a, x_d);
  const ConstraintSystem sys(config, x_a, x_d);
  Evaluated cur = sys.evaluate(R, d);
  double err = cur.residual.lpNorm<Eigen::Infinity>();
  int iter = 0;
  double cond = 1.0;
  while (err > opt.tolerance) {
    if (iter >= opt.max_iterations) {
      if (err <= opt.accept_residual) break;
      throw Error(ErrorCode::NoConvergence, "pose solve exceeded " + std::to_string(opt.max_iterations) +
                                                " iterations (residual " + format_double(err) + " m)");
    }
    ++iter;
    const Mat6 J = sys.jacobian(R, d);
    cond = condition_number(J);
    if (!(cond <= opt.max_condition)) {
      throw Error(ErrorCode::KinematicSingularity, "constraint Jacobian condition " + format_double(cond));
    }
    const Vec6 step = J.fullPivLu().solve(-cur.residual);
    double scale = 1.0;
    bool improved = false;
    for (int halving = 0; halving <= 8; ++halving, scale *= 0.5) {
      Eigen::Matrix3d R2;
      Vec3 d2;
      ConstraintSystem::apply(R, d, scale * step, R2, d2);
      Evaluated trial = sys.evaluate(R2, d2);
      const double trial_err = trial.residual.lpNorm<Eigen::Infinity>();
      if (trial_err < err) {
        R = R2;
        d = d2;
        cur = std::move(trial);
        err = trial_err;
        improved = true;
        break;
      }
    }
    if (!improved) {
      // Round-off floor reached.
      if (err <= opt.accept_residual) break;
      throw Error(ErrorCode::NoConvergence, "pose solve stalled at residual " + format_double(err) + " m");
    }
  }
  if (iter == 0) cond = condition_number(sys.jacobian(R, d));

  SuspensionPose pose;
  pose.points = cur.points;
  pose.x_a = x_a;
  pose.x_d = x_d;
  pose.iterations = iter;
  pose.max_residual = err;
  pose.condition = cond;
  pose.rotation = R;
  pose.translation = d;
  return pose;
}

}  // namespace

std::string_view to_string(PointId id) { return kPointNames[static_cast<std::size_t>(id)]; }

PointId point_from_string(std::string_view name) {
  for (std::size_t i = 0; i < kPointCount; ++i) {
    if (kPointNames[i] == name) return static_cast<PointId>(i);
  }
  throw Error(ErrorCode::InvalidConfig, "unknown hard point '" + std::string(name) + "'");
}

Vec3 SuspensionConfig::reference_point(PointId id) const {
  switch (id) {
    case PointId::U1: return u1;
    case PointId::U2: return u2;
    case PointId::L1: return l1;
    case PointId::L2: return l2;
    case PointId::P1: return p1;
    case PointId::P2: return p2;
    case PointId::T: return t;
    case PointId::S1: return s1;
    case PointId::S2: return s2;
    case PointId::S3: return s3;
    case PointId::Contact: return contact_patch;
    case PointId::CG: return Vec3::Zero();
  }
  return Vec3::Zero();
}

LinkLengths SuspensionConfig::link_lengths() const {
  LinkLengths L;
  L.u1_s1 = (s1 - u1).norm();
  L.u2_s1 = (s1 - u2).norm();
  L.l1_s3 = (s3 - l1).norm();
  L.l2_s3 = (s3 - l2).norm();
  L.t_s2 = (s2 - t).norm();
  L.s1_s2 = (s2 - s1).norm();
  L.s2_s3 = (s3 - s2).norm();
  L.s1_s3 = (s3 - s1).norm();
  L.damper = (p1 - p2).norm();
  return L;
}

void SuspensionConfig::validate() const {
  const LinkLengths L = link_lengths();
  for (double len : L.rigid()) {
    if (!(len > 0.0)) throw Error(ErrorCode::InvalidConfig, "rigid link of non-positive length");
  }
  if (!(L.damper > travel.spring)) {
    throw Error(ErrorCode::InvalidConfig, "damper shorter than its spring travel");
  }
  const double area = 0.5 * (s2 - s1).cross(s3 - s1).norm();
  if (!(area > 1e-9)) throw Error(ErrorCode::InvalidConfig, "knuckle points s1, s2, s3 are collinear");
  if (std::abs(rack_direction.norm() - 1.0) > 1e-12) {
    throw Error(ErrorCode::InvalidConfig, "rack direction is not unit length");
  }
  if (!(travel.rack >= 0.0) || !(travel.spring >= 0.0)) {
    throw Error(ErrorCode::InvalidConfig, "negative travel limits");
  }
  if (damper_mount == DamperMount::LowerArm && !(lower_arm_fraction >= 0.0 && lower_arm_fraction <= 1.0)) {
    throw Error(ErrorCode::InvalidConfig, "lower_arm_fraction must be in [0, 1]");
  }
}

SuspensionConfig SuspensionConfig::mirrored() const {
  const Eigen::DiagonalMatrix<double, 3> M(1.0, -1.0, 1.0);
  SuspensionConfig m = *this;
  for (Vec3* v : {&m.u1, &m.u2, &m.l1, &m.l2, &m.p2, &m.s1, &m.s2, &m.s3, &m.p1, &m.t, &m.contact_patch}) {
    *v = M * *v;
  }
  m.rack_direction = -(M * rack_direction);
  return m;
}

SuspensionConfig SuspensionConfig::fixture() {
  SuspensionConfig c;
  c.u1 = {0.15, -0.33, 0.13};
  c.u2 = {-0.15, -0.33, 0.11};
  c.l1 = {0.18, -0.36, -0.12};
  c.l2 = {-0.18, -0.36, -0.11};
  c.s1 = {0.00, -0.06, 0.12};
  c.s2 = {0.07, -0.06, 0.00};
  c.s3 = {0.00, -0.05, -0.10};
  c.t = {0.07, -0.40, 0.01};
  c.rack_direction = {0.0, 1.0, 0.0};
  c.p2 = {0.00, -0.30, 0.28};
  c.p1 = {0.00, -0.09, -0.06};
  c.contact_patch = {0.0, 0.0, -0.23};
  c.x_d0 = 0.02;
  c.damper_mount = DamperMount::Knuckle;
  // Lower-arm option: 60% from the arm's inner axis towards s3.
  c.lower_arm_fraction = 0.6;
  return c;
}

SuspensionConfig SuspensionConfig::from_config(const ConfigFile& cfg, const std::string& prefix) {
  SuspensionConfig c = fixture();
  auto vec = [&](const char* key, Vec3& out) {
    const std::string k = prefix + "." + key;
    if (cfg.has(k)) out = cfg.get_vec3(k);
  };
  vec("u1", c.u1);
  vec("u2", c.u2);
  vec("l1", c.l1);
  vec("l2", c.l2);
  vec("p1", c.p1);
  vec("p2", c.p2);
  vec("s1", c.s1);
  vec("s2", c.s2);
  vec("s3", c.s3);
  vec("t", c.t);
  vec("contact_patch", c.contact_patch);
  if (cfg.has(prefix + ".rack_direction")) c.rack_direction = cfg.get_vec3(prefix + ".rack_direction").normalized();
  c.x_d0 = cfg.get_double(prefix + ".x_d0", c.x_d0);
  c.travel.rack = cfg.get_double(prefix + ".travel_rack", c.travel.rack);
  c.travel.spring = cfg.get_double(prefix + ".travel_spring", c.travel.spring);
  c.lower_arm_fraction = cfg.get_double(prefix + ".lower_arm_fraction", c.lower_arm_fraction);
  const std::string mount = cfg.get_string(prefix + ".damper_mount", "knuckle");
  if (mount == "knuckle") {
    c.damper_mount = DamperMount::Knuckle;
  } else if (mount == "lower_arm") {
    c.damper_mount = DamperMount::LowerArm;
    if (!cfg.has(prefix + ".p1")) {
      c.p1 = 0.5 * (c.l1 + c.l2) + c.lower_arm_fraction * (c.s3 - 0.5 * (c.l1 + c.l2));
    }
  } else {
    throw Error(ErrorCode::InvalidConfig, "damper_mount must be 'knuckle' or 'lower_arm'");
  }
  c.validate();
  return c;
}

void SuspensionConfig::to_config(ConfigFile& cfg, const std::string& prefix) const {
  auto vec = [&](const char* key, const Vec3& v) {
    cfg.set(prefix + "." + key, "[" + format_double(v.x()) + ", " + format_double(v.y()) + ", " + format_double(v.z()) + "]");
  };
  vec("u1", u1);
  vec("u2", u2);
  vec("l1", l1);
  vec("l2", l2);
  vec("p1", p1);
  vec("p2", p2);
  vec("s1", s1);
  vec("s2", s2);
  vec("s3", s3);
  vec("t", t);
  vec("contact_patch", contact_patch);
  vec("rack_direction", rack_direction);
  cfg.set(prefix + ".x_d0", format_double(x_d0));
  cfg.set(prefix + ".travel_rack", format_double(travel.rack));
  cfg.set(prefix + ".travel_spring", format_double(travel.spring));
  cfg.set(prefix + ".lower_arm_fraction", format_double(lower_arm_fraction));
  cfg.set(prefix + ".damper_mount", damper_mount == DamperMount::Knuckle ? "knuckle" : "lower_arm");
}

SuspensionPose solve_pose(const SuspensionConfig& config, double x_a, double x_d, const PoseSolverOptions& options) {
  return newton(config, Eigen::Matrix3d::Identity(), Vec3::Zero(), x_a, x_d, options);
}

SuspensionPose solve_pose_from(const SuspensionConfig& config, const SuspensionPose& start, double x_a, double x_d,
                               const PoseSolverOptions& options) {
  return newton(config, start.rotation, start.translation, x_a, x_d, options);
}

KinematicsSolver::KinematicsSolver(SuspensionConfig config, PoseSolverOptions options)
    : config_(std::move(config)), options_(options) {
  config_.validate();
}

SuspensionPose KinematicsSolver::solve(double x_a, double x_d) {
  SuspensionPose pose = last_ ? solve_pose_from(config_, *last_, x_a, x_d, options_)
                              : solve_pose(config_, x_a, x_d, options_);
  last_ = pose;
  return pose;
}

Vec3 direction_vector(const SuspensionPose& pose, PointId i, PointId j) {
  const Vec3 diff = pose.point(j) - pose.point(i);
  const double len = diff.norm();
  if (!(len >= 1e-9)) {
    throw Error(ErrorCode::CoincidentPoints,
                std::string(to_string(i)) + " and " + std::string(to_string(j)) + " coincide");
  }
  return diff / len;
}

Vec3 lever_arm(const SuspensionPose& pose, PointId i) { return pose.point(i); }

LinkLengths measure_links(const SuspensionPose& pose) {
  auto dist = [&](PointId a, PointId b) { return (pose.point(a) - pose.point(b)).norm(); };
  LinkLengths L;
  L.u1_s1 = dist(PointId::U1, PointId::S1);
  L.u2_s1 = dist(PointId::U2, PointId::S1);
  L.l1_s3 = dist(PointId::L1, PointId::S3);
  L.l2_s3 = dist(PointId::L2, PointId::S3);
  L.t_s2 = dist(PointId::T, PointId::S2);
  L.s1_s2 = dist(PointId::S1, PointId::S2);
  L.s2_s3 = dist(PointId::S2, PointId::S3);
  L.s1_s3 = dist(PointId::S1, PointId::S3);
  L.damper = dist(PointId::P1, PointId::P2);
  return L;
}

GeometryReport check_geometry(const SuspensionConfig& config, int grid) {
  config.validate();
  GeometryReport r;
  r.lengths = config.link_lengths();
  r.knuckle_area = 0.5 * (config.s2 - config.s1).cross(config.s3 - config.s1).norm();
  r.reference_condition = solve_pose(config, 0.0, config.x_d0).condition;
  r.worst_condition = r.reference_condition;
  const int n = std::max(grid, 2);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      const double x_a = -config.travel.rack + 2.0 * config.travel.rack * i / (n - 1);
      const double x_d = config.x_d0 - config.travel.spring + 2.0 * config.travel.spring * j / (n - 1);
      r.worst_condition = std::max(r.worst_condition, solve_pose(config, x_a, x_d).condition);
    }
  }
  r.singularity_margin = std::log10(PoseSolverOptions{}.max_condition / r.worst_condition);
  return r;
}

}  // namespace wheelload::geometry
