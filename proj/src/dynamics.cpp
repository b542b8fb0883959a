#include "wheelload/dynamics.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Dense>

#include "wheelload/error.hpp"

namespace wheelload::dynamics {
namespace {

using geometry::PointId;
using Vec6 = Eigen::Matrix<double, 6, 1>;
using Mat6 = Eigen::Matrix<double, 6, 6>;

// Link endpoints in F_sus column order; `from` is the chassis-side point used as lever arm.
constexpr std::array<std::pair<PointId, PointId>, 6> kLinks = {{
    {PointId::P2, PointId::P1},
    {PointId::U1, PointId::S1},
    {PointId::U2, PointId::S1},
    {PointId::T, PointId::S2},
    {PointId::L1, PointId::S3},
    {PointId::L2, PointId::S3},
}};

struct TireState {
  Vec3 force;       // contact force in corner frame
  Vec3 dforce_dfz;  // derivative w.r.t. F_z
  Vec3 local;       // (F_x, F_y, F_z) in ground axes
};

double magic_formula_slope(const MagicFormulaParams::Coefficients& c, double slip) {
  // F is linear in F_z, so dF/dF_z = F(F_z = 1).
  const double bs = c.B * slip;
  return c.D * std::sin(c.C * std::atan(bs - c.E * (bs - std::atan(bs))));
}

TireState tire_state(const CornerModel& m, const LoadInputs& in, double fz) {
  const double kx = magic_formula_slope(m.tire.longitudinal, in.slip_kappa);
  const double ky = magic_formula_slope(m.tire.lateral, in.slip_alpha);
  TireState s;
  s.local = Vec3(kx * fz, ky * fz, fz);
  s.force = m.ground_axes * s.local;
  s.dforce_dfz = m.ground_axes * Vec3(kx, ky, 1.0);
  return s;
}

Vec6 residual(const CornerModel& m, const geometry::SuspensionPose& pose, const LoadInputs& in,
              const std::array<double, 6>& magnitudes, const Vec3& contact_force) {
  const ForceSystem F = assemble_force_system(pose, magnitudes);
  const ForceSystem M = assemble_moment_system(pose, F);
  const Vec3 r_cp = geometry::lever_arm(pose, PointId::Contact);
  const Vec3 wheel_moment = m.ground_axes * Vec3(0.0, in.wheel_torque, 0.0);
  Vec6 r;
  r.head<3>() = F.rowwise().sum() + m.body.mass * in.a_u + contact_force;
  r.tail<3>() = M.rowwise().sum() + m.body.inertia * in.beta_u + r_cp.cross(contact_force) + wheel_moment;
  return r;
}

double condition_number(const Mat6& J) {
  Eigen::JacobiSVD<Mat6> svd(J);
  const auto& s = svd.singularValues();
  return s[5] == 0.0 ? std::numeric_limits<double>::infinity() : s[0] / s[5];
}

}  // namespace

void UnsprungBody::validate() const {
  if (!(mass > 0.0)) throw Error(ErrorCode::InvalidConfig, "unsprung mass must be positive");
  if (!inertia.isApprox(inertia.transpose(), 1e-12)) throw Error(ErrorCode::InvalidConfig, "inertia not symmetric");
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(inertia);
  if (!(eig.eigenvalues().minCoeff() > 0.0)) {
    throw Error(ErrorCode::InvalidConfig, "inertia not positive definite");
  }
}

void SpringDamperCurve::validate() const {
  if (!(stiffness > 0.0)) throw Error(ErrorCode::InvalidConfig, "spring stiffness must be positive");
  if (damper.size() < 2) throw Error(ErrorCode::InvalidConfig, "damper curve needs at least two points");
  bool through_origin = false;
  for (std::size_t i = 0; i < damper.size(); ++i) {
    if (damper[i].first == 0.0 && damper[i].second == 0.0) through_origin = true;
    if (i > 0) {
      if (!(damper[i].first > damper[i - 1].first)) {
        throw Error(ErrorCode::InvalidConfig, "damper velocities must be strictly increasing");
      }
      if (damper[i].second < damper[i - 1].second) {
        throw Error(ErrorCode::InvalidConfig, "damper curve must be non-decreasing");
      }
    }
  }
  if (!through_origin) throw Error(ErrorCode::InvalidConfig, "damper curve must pass through (0, 0)");
}

double SpringDamperCurve::damper_force(double v) const {
  const auto& d = damper;
  std::size_t hi = 1;
  while (hi + 1 < d.size() && v > d[hi].first) ++hi;
  const auto& [v0, f0] = d[hi - 1];
  const auto& [v1, f1] = d[hi];
  return f0 + (f1 - f0) * (v - v0) / (v1 - v0);
}

SpringDamperCurve SpringDamperCurve::bilinear(double stiffness, double preload, double bump_slope,
                                              double rebound_slope) {
  SpringDamperCurve c;
  c.stiffness = stiffness;
  c.preload = preload;
  c.damper = {{-1.0, -rebound_slope}, {0.0, 0.0}, {1.0, bump_slope}};
  return c;
}

double spring_damper_force(const SpringDamperCurve& curve, double x_d0, double x_d, double xdot_d) {
  return curve.preload + curve.stiffness * (x_d - x_d0) + curve.damper_force(xdot_d);
}

void MagicFormulaParams::validate() const {
  for (const auto* c : {&longitudinal, &lateral}) {
    if (!(c->B > 0.0 && c->C > 0.0 && c->D > 0.0)) {
      throw Error(ErrorCode::InvalidConfig, "magic formula B, C, D must be positive");
    }
    if (!(std::abs(c->E) < 1.0)) throw Error(ErrorCode::InvalidConfig, "magic formula |E| must be < 1");
  }
}

double magic_formula(const MagicFormulaParams& params, double fz, double slip, TireChannel channel) {
  return fz * magic_formula_slope(params.channel(channel), slip);
}

void CornerModel::validate() const {
  geometry.validate();
  body.validate();
  spring.validate();
  tire.validate();
  if (!ground_axes.isUnitary(1e-12)) throw Error(ErrorCode::InvalidConfig, "ground axes must be orthonormal");
}

CornerModel CornerModel::fixture() {
  CornerModel m;
  m.spring.preload = 750.0;
  return m;
}

CornerModel CornerModel::from_config(const ConfigFile& cfg) {
  CornerModel m = fixture();
  m.geometry = geometry::SuspensionConfig::from_config(cfg, "geometry");
  m.body.mass = cfg.get_double("body.m_u", m.body.mass);
  if (cfg.has("body.inertia_diag")) m.body.inertia = cfg.get_vec3("body.inertia_diag").asDiagonal();
  m.spring.stiffness = cfg.get_double("spring.k", m.spring.stiffness);
  m.spring.preload = cfg.get_double("spring.preload", m.spring.preload);
  if (cfg.has("damper.velocity") || cfg.has("damper.force")) {
    const auto v = cfg.get_list("damper.velocity");
    const auto f = cfg.get_list("damper.force");
    if (v.size() != f.size()) throw Error(ErrorCode::InvalidConfig, "damper.velocity and damper.force differ in length");
    m.spring.damper.clear();
    for (std::size_t i = 0; i < v.size(); ++i) m.spring.damper.emplace_back(v[i], f[i]);
  }
  auto coeffs = [&](const std::string& prefix, MagicFormulaParams::Coefficients& c) {
    c.B = cfg.get_double(prefix + ".B", c.B);
    c.C = cfg.get_double(prefix + ".C", c.C);
    c.D = cfg.get_double(prefix + ".D", c.D);
    c.E = cfg.get_double(prefix + ".E", c.E);
  };
  coeffs("tire.x", m.tire.longitudinal);
  coeffs("tire.y", m.tire.lateral);
  m.static_load_guess = cfg.get_double("body.static_load_guess", m.static_load_guess);
  m.validate();
  return m;
}

void CornerModel::to_config(ConfigFile& cfg) const {
  geometry.to_config(cfg, "geometry");
  const Eigen::Vector3d diag = body.inertia.diagonal();
  cfg.set("body.m_u", format_double(body.mass));
  cfg.set("body.inertia_diag", "[" + format_double(diag.x()) + ", " + format_double(diag.y()) + ", " + format_double(diag.z()) + "]");
  cfg.set("body.static_load_guess", format_double(static_load_guess));
  cfg.set("spring.k", format_double(spring.stiffness));
  cfg.set("spring.preload", format_double(spring.preload));
  std::string v = "[", f = "[";
  for (std::size_t i = 0; i < spring.damper.size(); ++i) {
    const char* sep = i + 1 < spring.damper.size() ? ", " : "]";
    v += format_double(spring.damper[i].first) + sep;
    f += format_double(spring.damper[i].second) + sep;
  }
  cfg.set("damper.velocity", v);
  cfg.set("damper.force", f);
  auto coeffs = [&](const std::string& prefix, const MagicFormulaParams::Coefficients& c) {
    cfg.set(prefix + ".B", format_double(c.B));
    cfg.set(prefix + ".C", format_double(c.C));
    cfg.set(prefix + ".D", format_double(c.D));
    cfg.set(prefix + ".E", format_double(c.E));
  };
  coeffs("tire.x", tire.longitudinal);
  coeffs("tire.y", tire.lateral);
}

LoadInputs LoadInputs::from_frame(const SensorFrame& f) {
  LoadInputs in;
  in.x_a = f.x_a;
  in.x_d = f.x_d;
  in.xdot_d = f.xdot_d;
  in.a_u = f.a_u;
  in.slip_kappa = f.slip_kappa;
  in.slip_alpha = f.slip_alpha;
  return in;
}

ForceSystem link_directions(const geometry::SuspensionPose& pose) {
  ForceSystem D;
  for (int j = 0; j < 6; ++j) D.col(j) = geometry::direction_vector(pose, kLinks[j].first, kLinks[j].second);
  return D;
}

ForceSystem assemble_force_system(const geometry::SuspensionPose& pose, const std::array<double, 6>& magnitudes) {
  const ForceSystem D = link_directions(pose);
  ForceSystem F;
  for (int j = 0; j < 6; ++j) F.col(j) = magnitudes[j] * D.col(j);
  return F;
}

ForceSystem assemble_moment_system(const geometry::SuspensionPose& pose, const ForceSystem& forces) {
  ForceSystem M;
  for (int j = 0; j < 6; ++j) {
    M.col(j) = geometry::lever_arm(pose, kLinks[j].first).cross(Vec3(forces.col(j)));
  }
  return M;
}

WheelLoadSolution solve_wheel_load(const CornerModel& m, const geometry::SuspensionPose& pose, const LoadInputs& in,
                                   const EquilibriumOptions& opt) {
  const ForceSystem D = link_directions(pose);
  Mat6 J_links = Mat6::Zero();
  for (int j = 1; j < 6; ++j) {
    J_links.block<3, 1>(0, j - 1) = D.col(j);
    J_links.block<3, 1>(3, j - 1) = geometry::lever_arm(pose, kLinks[j].first).cross(Vec3(D.col(j)));
  }
  const Vec3 r_cp = geometry::lever_arm(pose, PointId::Contact);

  std::array<double, 6> mags{};
  mags[kSpring] = spring_damper_force(m.spring, m.geometry.x_d0, in.x_d, in.xdot_d);
  double fz = m.static_load_guess;

  auto eval = [&](const std::array<double, 6>& g, double load) {
    return residual(m, pose, in, g, tire_state(m, in, load).force);
  };

  Vec6 r = eval(mags, fz);
  double err = r.lpNorm<Eigen::Infinity>();
  int iter = 0;
  double cond = 0.0;
  // Iterate well past the acceptance tolerance, down to the round-off floor.
  const double floor_tol = opt.tolerance * 1e-4;
  while (err > floor_tol) {
    if (iter >= opt.max_iterations) break;
    ++iter;
    const TireState tire = tire_state(m, in, fz);
    Mat6 J = J_links;
    J.block<3, 1>(0, 5) = tire.dforce_dfz;
    J.block<3, 1>(3, 5) = r_cp.cross(tire.dforce_dfz);
    cond = condition_number(J);
    if (!(cond <= opt.max_condition)) {
      throw Error(ErrorCode::SingularEquilibrium, "equilibrium Jacobian condition " + format_double(cond));
    }
    const Vec6 step = J.fullPivLu().solve(-r);
    double scale = 1.0;
    bool improved = false;
    for (int halving = 0; halving <= 8; ++halving, scale *= 0.5) {
      auto trial = mags;
      for (int j = 1; j < 6; ++j) trial[j] += scale * step[j - 1];
      const double trial_fz = fz + scale * step[5];
      const Vec6 tr = eval(trial, trial_fz);
      const double trial_err = tr.lpNorm<Eigen::Infinity>();
      if (trial_err < err) {
        mags = trial;
        fz = trial_fz;
        r = tr;
        err = trial_err;
        improved = true;
        break;
      }
    }
    if (!improved) break;
  }
  if (!(err <= opt.tolerance)) {
    throw Error(ErrorCode::NoConvergence, "equilibrium residual " + format_double(err) + " after " +
                                              std::to_string(iter) + " iterations");
  }

  WheelLoadSolution sol;
  sol.magnitudes = mags;
  sol.tire_force = tire_state(m, in, fz).local;
  sol.wheel_moment = Vec3(0.0, in.wheel_torque, 0.0);
  sol.fz_raw = fz;
  sol.negative_load = fz < 0.0;
  sol.fz = std::max(fz, 0.0);
  sol.force_residual = r.head<3>().lpNorm<Eigen::Infinity>();
  sol.moment_residual = r.tail<3>().lpNorm<Eigen::Infinity>();
  sol.iterations = iter;
  sol.condition = cond;
  return sol;
}

WheelLoadSolution solve_wheel_load(const CornerModel& model, const LoadInputs& inputs,
                                   const EquilibriumOptions& options) {
  const auto pose = geometry::solve_pose(model.geometry, inputs.x_a, inputs.x_d);
  return solve_wheel_load(model, pose, inputs, options);
}

std::pair<double, double> equilibrium_residual(const CornerModel& model, const geometry::SuspensionPose& pose,
                                               const LoadInputs& inputs, const WheelLoadSolution& solution) {
  const Vec3 contact = model.ground_axes * solution.tire_force;
  const Vec6 r = residual(model, pose, inputs, solution.magnitudes, contact);
  return {r.head<3>().lpNorm<Eigen::Infinity>(), r.tail<3>().lpNorm<Eigen::Infinity>()};
}

double physics_estimate(const CornerModel& model, const SensorFrame& frame) {
  return solve_wheel_load(model, LoadInputs::from_frame(frame)).fz;
}

}  // namespace wheelload::dynamics
