#include "wheelload/sim.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <regex>
#include <set>
#include <sstream>

#include <boost/math/tools/toms748_solve.hpp>

#include "wheelload/error.hpp"
#include "wheelload/random.hpp"

namespace wheelload::sim {

namespace fs = std::filesystem;

std::string_view to_string(Style style) { return style == Style::Smooth ? "smooth" : "aggressive"; }

Style style_from_string(std::string_view name) {
  if (name == "smooth") return Style::Smooth;
  if (name == "aggressive") return Style::Aggressive;
  throw Error(ErrorCode::InvalidConfig, "unknown style '" + std::string(name) + "' (smooth|aggressive)");
}

std::string_view to_string(Corner corner) {
  static constexpr std::array<std::string_view, kCorners> names{"FL", "FR", "RL", "RR"};
  return names[static_cast<std::size_t>(corner)];
}

Corner corner_from_string(std::string_view name) {
  for (auto c : kAllCorners) {
    if (to_string(c) == name) return c;
  }
  throw Error(ErrorCode::InvalidConfig, "unknown corner '" + std::string(name) + "' (FL|FR|RL|RR)");
}

std::size_t Scenario::samples() const {
  const double n = duration * rate;
  if (!(duration > 0.0) || !(rate > 0.0) || std::abs(n - std::round(n)) > 1e-9 * std::max(1.0, n)) {
    throw Error(ErrorCode::InvalidConfig, "duration * rate must be a positive integer, got " + format_double(n));
  }
  return static_cast<std::size_t>(std::llround(n));
}

StyleBand style_band(Style style) {
  if (style == Style::Smooth) return {1.5, 3.0, 0.8, 2.0, 0.05, 0.3, 0.5, 1.0, 0.5, 2.0};
  return {6.0, 10.0, 3.0, 6.0, 0.1, 0.8, 1.5, 2.5, 0.5, 3.0};
}

namespace {

// Unit-peak band-limited profile: three sines plus first-order low-passed noise.
std::vector<double> profile(Rng& rng, std::size_t n, double dt, double f_lo, double f_hi) {
  std::vector<double> y(n, 0.0);
  for (int k = 0; k < 3; ++k) {
    const double amp = rng.uniform(0.3, 1.0);
    const double f = rng.uniform(f_lo, f_hi);
    const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
    for (std::size_t i = 0; i < n; ++i) y[i] += amp * std::sin(2.0 * std::numbers::pi * f * dt * i + phase);
  }
  const double alpha = 1.0 - std::exp(-2.0 * std::numbers::pi * f_hi * dt);
  std::vector<double> noise(n);
  double state = 0.0, noise_peak = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    state += alpha * (rng.normal() - state);
    noise[i] = state;
    noise_peak = std::max(noise_peak, std::abs(state));
  }
  double peak = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (noise_peak > 0.0) y[i] += 0.3 * noise[i] / noise_peak;
    peak = std::max(peak, std::abs(y[i]));
  }
  if (peak > 0.0) {
    for (auto& v : y) v /= peak;
  }
  return y;
}

}  // namespace

Excitation generate_scenario(const Scenario& sc) {
  const std::size_t n = sc.samples();
  const double dt = 1.0 / sc.rate;
  const StyleBand band = style_band(sc.style);
  Rng rng(derive_seed(sc.seed, 0x5ce4a210));

  Excitation ex;
  ex.t.resize(n);
  for (std::size_t i = 0; i < n; ++i) ex.t[i] = static_cast<double>(i) * dt;

  const double lat_peak = rng.uniform(band.lateral_lo, band.lateral_hi);
  const double lon_peak = rng.uniform(band.longitudinal_lo, band.longitudinal_hi);
  ex.a_y = profile(rng, n, dt, band.freq_lo, band.freq_hi);
  ex.a_x = profile(rng, n, dt, band.freq_lo, band.freq_hi);
  const auto steer = profile(rng, n, dt, band.freq_lo, 2.0 * band.freq_hi);
  ex.x_a.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    ex.a_y[i] *= lat_peak;
    ex.a_x[i] *= lon_peak;
    ex.x_a[i] = kRackPerLateral * ex.a_y[i] + 0.002 * steer[i];
  }
  const double heave_peak = rng.uniform(band.heave_lo, band.heave_hi);
  ex.heave = profile(rng, n, dt, band.heave_freq_lo, band.heave_freq_hi);
  for (auto& h : ex.heave) h *= heave_peak;
  return ex;
}

std::pair<double, double> SlipClosure::slips(const Eigen::Vector3d& a_u) const {
  return {-kappa_per_ax * a_u.x(), -alpha_per_ay * a_u.y()};
}

void VehicleParams::validate() const {
  static const std::regex safe("[A-Za-z0-9_-]+");
  if (!std::regex_match(name, safe)) {
    throw Error(ErrorCode::InvalidConfig, "vehicle name '" + name + "' must match [A-Za-z0-9_-]+");
  }
  double sum = 0.0;
  for (double f : fractions) {
    if (!(f > 0.0)) throw Error(ErrorCode::InvalidConfig, "static load fractions must be positive");
    sum += f;
  }
  if (std::abs(sum - 1.0) > 1e-9) {
    throw Error(ErrorCode::InvalidConfig, "static load fractions sum to " + format_double(sum));
  }
  if (!(sprung_mass > 0.0) || !(cg_height > 0.0) || !(track > 0.0) || !(wheelbase > 0.0)) {
    throw Error(ErrorCode::InvalidConfig, "vehicle mass and dimensions must be positive");
  }
  corner.validate();
}

dynamics::CornerModel VehicleParams::corner_model(Corner c) const {
  dynamics::CornerModel m = corner;
  if (!is_left(c)) m.geometry = corner.geometry.mirrored();
  m.static_load_guess = static_load(c);
  return m;
}

double VehicleParams::static_load(Corner c) const {
  return fractions[static_cast<std::size_t>(c)] * sprung_mass * kGravity + corner.body.mass * kGravity;
}

double VehicleParams::total_weight() const { return (sprung_mass + 4.0 * corner.body.mass) * kGravity; }

VehicleParams VehicleParams::fixture(int variant) {
  VehicleParams v;
  switch (variant) {
    case 0:
      break;
    case 1:
      v.name = "fs-b";
      v.sprung_mass = 275.0;
      v.fractions = {0.24, 0.22, 0.28, 0.26};
      v.cg_height = 0.28;
      v.track = 1.22;
      v.wheelbase = 1.60;
      break;
    case 2:
      v.name = "fs-c";
      v.sprung_mass = 230.0;
      v.fractions = {0.25, 0.27, 0.23, 0.25};
      v.cg_height = 0.32;
      v.track = 1.18;
      v.wheelbase = 1.53;
      break;
    default:
      throw Error(ErrorCode::InvalidConfig, "fixture vehicle variant must be 0, 1 or 2");
  }
  return v;
}

VehicleParams VehicleParams::from_config(const ConfigFile& cfg) {
  VehicleParams v;
  v.name = cfg.get_string("vehicle.name", v.name);
  v.sprung_mass = cfg.get_double("vehicle.m_s", v.sprung_mass);
  if (cfg.has("vehicle.fractions")) {
    const auto f = cfg.get_list("vehicle.fractions");
    if (f.size() != kCorners) throw Error(ErrorCode::InvalidConfig, "vehicle.fractions needs 4 entries (FL, FR, RL, RR)");
    std::copy(f.begin(), f.end(), v.fractions.begin());
  }
  v.cg_height = cfg.get_double("vehicle.cg_height", v.cg_height);
  v.track = cfg.get_double("vehicle.track", v.track);
  v.wheelbase = cfg.get_double("vehicle.wheelbase", v.wheelbase);
  v.slip.kappa_per_ax = cfg.get_double("slip.kappa_per_ax", v.slip.kappa_per_ax);
  v.slip.alpha_per_ay = cfg.get_double("slip.alpha_per_ay", v.slip.alpha_per_ay);
  v.corner = dynamics::CornerModel::from_config(cfg);
  v.validate();
  return v;
}

ConfigFile VehicleParams::to_config() const {
  ConfigFile cfg;
  cfg.set("vehicle.name", name);
  cfg.set("vehicle.m_s", format_double(sprung_mass));
  cfg.set("vehicle.fractions", "[" + format_double(fractions[0]) + ", " + format_double(fractions[1]) + ", " +
                                   format_double(fractions[2]) + ", " + format_double(fractions[3]) + "]");
  cfg.set("vehicle.cg_height", format_double(cg_height));
  cfg.set("vehicle.track", format_double(track));
  cfg.set("vehicle.wheelbase", format_double(wheelbase));
  cfg.set("slip.kappa_per_ax", format_double(slip.kappa_per_ax));
  cfg.set("slip.alpha_per_ay", format_double(slip.alpha_per_ay));
  corner.to_config(cfg);
  return cfg;
}

std::array<double, kCorners> corner_loads(const VehicleParams& v, double a_x, double a_y, double heave) {
  const double lateral = v.sprung_mass * a_y * v.cg_height / v.track;
  const double longitudinal = v.sprung_mass * a_x * v.cg_height / v.wheelbase;
  const double front_share = v.fractions[0] + v.fractions[1];
  std::array<double, kCorners> f{};
  for (auto c : kAllCorners) {
    const double side = is_left(c) ? -1.0 : 1.0;
    const double axle = is_front(c) ? front_share : 1.0 - front_share;
    const double lon = is_front(c) ? -0.5 * longitudinal : 0.5 * longitudinal;
    const auto ci = static_cast<std::size_t>(c);
    f[ci] = v.static_load(c) + side * lateral * axle + lon + v.fractions[ci] * v.sprung_mass * heave;
  }
  return f;
}

CornerSeries simulate_vehicle(const VehicleParams& vehicle, const Excitation& ex) {
  vehicle.validate();
  const std::size_t n = ex.t.size();
  if (ex.a_x.size() != n || ex.a_y.size() != n || ex.x_a.size() != n || (!ex.heave.empty() && ex.heave.size() != n)) {
    throw Error(ErrorCode::InvalidConfig, "excitation channels differ in length");
  }
  auto heave = [&](std::size_t i) { return ex.heave.empty() ? 0.0 : ex.heave[i]; };
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::isfinite(ex.a_x[i]) || !std::isfinite(ex.a_y[i]) || !std::isfinite(ex.x_a[i]) || !std::isfinite(heave(i))) {
      throw Error(ErrorCode::InvalidConfig, "excitation is not finite at sample " + std::to_string(i));
    }
  }
  const double dt = n > 1 ? ex.t[1] - ex.t[0] : 1.0;

  CornerSeries out;
  for (auto c : kAllCorners) {
    const auto ci = static_cast<std::size_t>(c);
    const dynamics::CornerModel model = vehicle.corner_model(c);
    const auto& geo = model.geometry;
    geometry::KinematicsSolver kin(geo);
    const double x_min = geo.x_d0 - geo.travel.spring * (1.0 - 1e-9);
    const double x_max = geo.x_d0 + geo.travel.spring * (1.0 - 1e-9);

    Series& series = out.corners[ci];
    series.resize(n);
    out.demanded[ci].resize(n);
    double x_prev = geo.x_d0;
    for (std::size_t i = 0; i < n; ++i) {
      SensorFrame& f = series[i];
      f.t = ex.t[i];
      f.x_a = is_front(c) ? ex.x_a[i] : 0.0;
      f.a_u = Eigen::Vector3d(-ex.a_x[i], -ex.a_y[i], -kGravity);
      std::tie(f.slip_kappa, f.slip_alpha) = vehicle.slip.slips(f.a_u);
      const double demand = corner_loads(vehicle, ex.a_x[i], ex.a_y[i], heave(i))[ci];
      out.demanded[ci][i] = demand;

      auto rate_at = [&](double x) { return i == 0 ? 0.0 : (x - x_prev) / dt; };
      auto residual = [&](double x) {
        dynamics::LoadInputs in = dynamics::LoadInputs::from_frame(f);
        in.x_d = x;
        in.xdot_d = rate_at(x);
        return dynamics::solve_wheel_load(model, kin.solve(f.x_a, x), in).fz_raw - demand;
      };

      // a demand that has not moved keeps the previous state exactly
      if (i > 0 && std::abs(residual(x_prev)) <= 1e-9) {
        f.x_d = x_prev;
        f.xdot_d = 0.0;
        f.fz_truth = dynamics::physics_estimate(model, f);
        continue;
      }
      double half = 0.002;
      double lo = std::max(x_min, x_prev - half), hi = std::min(x_max, x_prev + half);
      double r_lo = residual(lo), r_hi = residual(hi);
      while (r_lo > 0.0 || r_hi < 0.0) {
        if ((r_lo > 0.0 && lo <= x_min) || (r_hi < 0.0 && hi >= x_max)) {
          throw Error(ErrorCode::InversionFailure, std::string(to_string(c)) + " at t=" + format_double(f.t) +
                                                       ": no spring compression in travel gives " +
                                                       format_double(demand) + " N");
        }
        half *= 4.0;
        if (r_lo > 0.0) {
          lo = std::max(x_min, x_prev - half);
          r_lo = residual(lo);
        }
        if (r_hi < 0.0) {
          hi = std::min(x_max, x_prev + half);
          r_hi = residual(hi);
        }
      }
      double x = lo;
      if (r_lo != 0.0 && r_hi != 0.0) {
        std::uintmax_t iters = 100;
        const auto bracket = boost::math::tools::toms748_solve(residual, lo, hi, r_lo, r_hi,
                                                               boost::math::tools::eps_tolerance<double>(52), iters);
        x = 0.5 * (bracket.first + bracket.second);
      } else if (r_hi == 0.0) {
        x = hi;
      }
      f.x_d = x;
      f.xdot_d = rate_at(x);
      f.fz_truth = dynamics::physics_estimate(model, f);
      x_prev = x;
    }
  }
  return out;
}

void NoiseSpec::validate() const {
  for (double s : {x_a, x_d, xdot_d, a_u, slip_kappa, slip_alpha, outlier_scale}) {
    if (!(s >= 0.0) || !std::isfinite(s)) throw Error(ErrorCode::InvalidConfig, "noise stds must be finite and >= 0");
  }
  if (!(outlier_rate >= 0.0 && outlier_rate < 1.0)) {
    throw Error(ErrorCode::InvalidConfig, "noise.outlier_rate must lie in [0, 1)");
  }
}

NoiseSpec NoiseSpec::none() { return {0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 10.0}; }

NoiseSpec NoiseSpec::from_config(const ConfigFile& cfg) {
  NoiseSpec n;
  n.x_a = cfg.get_double("noise.x_a", n.x_a);
  n.x_d = cfg.get_double("noise.x_d", n.x_d);
  n.xdot_d = cfg.get_double("noise.xdot_d", n.xdot_d);
  n.a_u = cfg.get_double("noise.a_u", n.a_u);
  n.slip_kappa = cfg.get_double("noise.slip_kappa", n.slip_kappa);
  n.slip_alpha = cfg.get_double("noise.slip_alpha", n.slip_alpha);
  n.outlier_rate = cfg.get_double("noise.outlier_rate", n.outlier_rate);
  n.outlier_scale = cfg.get_double("noise.outlier_scale", n.outlier_scale);
  n.validate();
  return n;
}

ConfigFile NoiseSpec::to_config() const {
  ConfigFile cfg;
  cfg.set("noise.x_a", format_double(x_a));
  cfg.set("noise.x_d", format_double(x_d));
  cfg.set("noise.xdot_d", format_double(xdot_d));
  cfg.set("noise.a_u", format_double(a_u));
  cfg.set("noise.slip_kappa", format_double(slip_kappa));
  cfg.set("noise.slip_alpha", format_double(slip_alpha));
  cfg.set("noise.outlier_rate", format_double(outlier_rate));
  cfg.set("noise.outlier_scale", format_double(outlier_scale));
  return cfg;
}

Series inject_noise(const Series& clean, const NoiseSpec& spec, std::uint64_t seed) {
  spec.validate();
  Rng rng(seed);
  auto perturb = [&](double& v, double sd) {
    if (sd == 0.0) return;
    v += sd * rng.normal();
    if (spec.outlier_rate > 0.0 && rng.uniform() < spec.outlier_rate) {
      v += (rng.uniform() < 0.5 ? -1.0 : 1.0) * spec.outlier_scale * sd;
    }
  };
  Series out = clean;
  for (auto& f : out) {
    perturb(f.x_a, spec.x_a);
    perturb(f.x_d, spec.x_d);
    perturb(f.xdot_d, spec.xdot_d);
    for (int k = 0; k < 3; ++k) perturb(f.a_u[k], spec.a_u);
    perturb(f.slip_kappa, spec.slip_kappa);
    perturb(f.slip_alpha, spec.slip_alpha);
  }
  return out;
}

const VehicleParams& Dataset::vehicle(const std::string& name) const {
  for (const auto& v : vehicles) {
    if (v.name == name) return v;
  }
  throw Error(ErrorCode::SchemaMismatch, "dataset has no vehicle '" + name + "'");
}

DatasetSegment make_segment(const std::string& id, const VehicleParams& vehicle, const Scenario& scenario,
                            const NoiseSpec& noise, std::uint64_t noise_seed) {
  DatasetSegment seg;
  seg.meta = {id, vehicle.name, vehicle.hash(), scenario.style, scenario.seed, noise_seed, scenario.rate, noise};
  auto sim = simulate_vehicle(vehicle, generate_scenario(scenario));
  for (auto c : kAllCorners) {
    const auto ci = static_cast<std::size_t>(c);
    NoiseSpec corner_noise = noise;
    if (!is_front(c)) corner_noise.x_a = 0.0;
    seg.corners[ci] = inject_noise(sim.corners[ci], corner_noise, derive_seed(noise_seed, ci));
  }
  seg.clean = std::move(sim.corners);
  return seg;
}

Dataset make_style_set(const VehicleParams& vehicle, Style style, std::size_t count, const NoiseSpec& noise,
                       std::uint64_t base_seed, double duration, double rate) {
  Dataset ds;
  ds.vehicles = {vehicle};
  const std::uint64_t family = derive_seed(base_seed, fnv1a(vehicle.name)) ^ (style == Style::Smooth ? 0 : 0x5000);
  for (std::size_t k = 0; k < count; ++k) {
    Scenario sc{style, duration, rate, derive_seed(family, k)};
    char idx[24];
    std::snprintf(idx, sizeof idx, "%02zu", k);
    const std::string id = vehicle.name + "_" + std::string(to_string(style)) + "_" + idx;
    ds.segments.push_back(make_segment(id, vehicle, sc, noise, derive_seed(sc.seed, 0x401)));
  }
  return ds;
}

Dataset make_benchmark(const std::vector<VehicleParams>& vehicles, std::size_t seeds_per_style,
                       const NoiseSpec& noise, std::uint64_t base_seed, double duration) {
  Dataset ds;
  ds.vehicles = vehicles;
  for (const auto& v : vehicles) {
    for (auto style : {Style::Smooth, Style::Aggressive}) {
      auto part = make_style_set(v, style, seeds_per_style, noise, base_seed, duration);
      for (auto& seg : part.segments) ds.segments.push_back(std::move(seg));
    }
  }
  return ds;
}

// ---- files --------------------------------------------------------------

namespace {

const std::vector<std::string> kColumns{"t",    "x_a",  "x_d",        "xdot_d",     "a_ux",
                                        "a_uy", "a_uz", "slip_kappa", "slip_alpha", "Fz_truth"};
constexpr const char* kManifestHeader = "# wheelload dataset";

std::string series_csv(const Series& series) {
  std::string out;
  for (std::size_t i = 0; i < kColumns.size(); ++i) out += kColumns[i] + (i + 1 < kColumns.size() ? "," : "\n");
  for (const auto& f : series) {
    const std::array<double, 9> v{f.t, f.x_a, f.x_d, f.xdot_d, f.a_u.x(), f.a_u.y(), f.a_u.z(), f.slip_kappa,
                                  f.slip_alpha};
    for (double x : v) out += format_double(x) + ",";
    out += f.fz_truth ? format_double(*f.fz_truth) : std::string();
    out += "\n";
  }
  return out;
}

std::string segment_file(const std::string& id, Corner c) { return id + "_" + std::string(to_string(c)) + ".csv"; }

std::string noise_token(const NoiseSpec& n) {
  std::string out;
  const ConfigFile cfg = n.to_config();
  for (const auto& [k, v] : cfg.entries()) out += (out.empty() ? "" : ",") + k.substr(6) + ":" + v;
  return out;
}

NoiseSpec parse_noise_token(const std::string& token) {
  ConfigFile cfg;
  std::istringstream items(token);
  std::string item;
  while (std::getline(items, item, ',')) {
    const auto colon = item.find(':');
    if (colon == std::string::npos) throw Error(ErrorCode::SchemaMismatch, "bad noise entry '" + item + "'");
    cfg.set("noise." + item.substr(0, colon), item.substr(colon + 1));
  }
  return NoiseSpec::from_config(cfg);
}

std::string manifest_text(const Dataset& ds) {
  std::string out = std::string(kManifestHeader) + "\nversion = " + std::to_string(kDatasetVersion) + "\n";
  std::set<std::string> names;
  for (const auto& v : ds.vehicles) names.insert(v.name);
  for (const auto& name : names) out += "vehicle " + name + " file=vehicles/" + name + ".cfg\n";
  for (const auto& s : ds.segments) {
    out += "segment id=" + s.meta.id + " vehicle=" + s.meta.vehicle + " vehicle_hash=" + s.meta.vehicle_hash +
           " style=" + std::string(to_string(s.meta.style)) + " scenario_seed=" + std::to_string(s.meta.scenario_seed) +
           " noise_seed=" + std::to_string(s.meta.noise_seed) + " rate=" + format_double(s.meta.rate) +
           " samples=" + std::to_string(s.samples()) + " clean=" + (s.clean ? "1" : "0") +
           " noise=" + noise_token(s.meta.noise) + " files=";
    for (auto c : kAllCorners) out += segment_file(s.meta.id, c) + (c == Corner::RR ? "\n" : ",");
  }
  return out;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  f << text;
  if (!f) throw Error(ErrorCode::IoError, "write failed for " + path.string());
}

std::string read_text(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorCode::IoError, "cannot read " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

double parse_number(const std::string& s, const fs::path& path, std::size_t line) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size()) {
    throw Error(ErrorCode::SchemaMismatch, path.filename().string() + " line " + std::to_string(line) +
                                               ": not a number '" + s + "'");
  }
  return v;
}

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream ss(line);
  while (std::getline(ss, item, sep)) out.push_back(item);
  if (!line.empty() && line.back() == sep) out.emplace_back();
  return out;
}

}  // namespace

std::string Dataset::hash() const {
  std::uint64_t h = fnv1a(manifest_text(*this));
  std::map<std::string, std::string> by_name;
  for (const auto& v : vehicles) by_name[v.name] = v.to_config().canonical();
  for (const auto& [name, text] : by_name) h = fnv1a(text, h);
  for (const auto& s : segments) {
    for (const auto& series : s.corners) h = fnv1a(series_csv(series), h);
  }
  return hex64(h);
}

void write_series_csv(const Series& series, const fs::path& path) { write_text(path, series_csv(series)); }

Series read_series_csv(const fs::path& path) {
  std::istringstream in(read_text(path));
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorCode::SchemaMismatch, path.filename().string() + ": missing header row");
  const auto header = split(line, ',');
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < header.size(); ++i) index[header[i]] = i;
  std::vector<std::size_t> col;
  for (const auto& name : kColumns) {
    auto it = index.find(name);
    if (it == index.end() && name == "Fz_truth") {
      col.push_back(std::string::npos);  // measured data has no ground truth
      continue;
    }
    if (it == index.end()) {
      throw Error(ErrorCode::SchemaMismatch, path.filename().string() + ": missing column '" + name + "'");
    }
    col.push_back(it->second);
  }
  Series out;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto cells = split(line, ',');
    if (cells.size() != header.size()) {
      throw Error(ErrorCode::SchemaMismatch, path.filename().string() + " line " + std::to_string(lineno) + ": " +
                                                 std::to_string(cells.size()) + " cells, header has " +
                                                 std::to_string(header.size()));
    }
    auto num = [&](std::size_t k) { return parse_number(cells[col[k]], path, lineno); };
    SensorFrame f;
    f.t = num(0);
    f.x_a = num(1);
    f.x_d = num(2);
    f.xdot_d = num(3);
    f.a_u = Eigen::Vector3d(num(4), num(5), num(6));
    f.slip_kappa = num(7);
    f.slip_alpha = num(8);
    if (col[9] != std::string::npos && !cells[col[9]].empty()) f.fz_truth = num(9);
    out.push_back(f);
  }
  return out;
}

void write_dataset(const Dataset& ds, const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir / "vehicles", ec);
  if (ec) throw Error(ErrorCode::IoError, "cannot create " + dir.string() + ": " + ec.message());
  bool any_clean = false;
  for (const auto& s : ds.segments) any_clean = any_clean || s.clean.has_value();
  if (any_clean) {
    fs::create_directories(dir / "clean", ec);
    if (ec) throw Error(ErrorCode::IoError, "cannot create " + (dir / "clean").string());
  }
  for (const auto& v : ds.vehicles) write_text(dir / "vehicles" / (v.name + ".cfg"), v.to_config().canonical());
  for (const auto& s : ds.segments) {
    for (auto c : kAllCorners) {
      const auto ci = static_cast<std::size_t>(c);
      write_series_csv(s.corners[ci], dir / segment_file(s.meta.id, c));
      if (s.clean) write_series_csv((*s.clean)[ci], dir / "clean" / segment_file(s.meta.id, c));
    }
  }
  write_text(dir / "manifest.txt", manifest_text(ds));
}

Dataset read_dataset(const fs::path& dir) {
  const fs::path manifest = dir / "manifest.txt";
  if (!fs::exists(manifest)) throw Error(ErrorCode::IoError, "no manifest.txt in " + dir.string());
  std::istringstream in(read_text(manifest));
  std::string line;
  if (!std::getline(in, line) || line != kManifestHeader) {
    throw Error(ErrorCode::SchemaMismatch, manifest.string() + ": not a dataset manifest");
  }
  Dataset ds;
  bool versioned = false;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto tokens = split(line, ' ');
    if (tokens[0] == "version") {
      if (tokens.size() != 3 || tokens[2] != std::to_string(kDatasetVersion)) {
        throw Error(ErrorCode::SchemaMismatch, "dataset " + line + ", this build reads version " +
                                                   std::to_string(kDatasetVersion));
      }
      versioned = true;
      continue;
    }
    std::map<std::string, std::string> kv;
    for (std::size_t i = 1; i < tokens.size(); ++i) {
      const auto eq = tokens[i].find('=');
      if (eq != std::string::npos) kv[tokens[i].substr(0, eq)] = tokens[i].substr(eq + 1);
    }
    auto need = [&](const std::string& key) -> const std::string& {
      auto it = kv.find(key);
      if (it == kv.end()) throw Error(ErrorCode::SchemaMismatch, "manifest line lacks '" + key + "': " + line);
      return it->second;
    };
    if (tokens[0] == "vehicle") {
      ds.vehicles.push_back(VehicleParams::from_config(ConfigFile::load(dir / need("file"))));
      if (ds.vehicles.back().name != tokens.at(1)) {
        throw Error(ErrorCode::SchemaMismatch, "vehicle file for '" + tokens[1] + "' names '" +
                                                   ds.vehicles.back().name + "'");
      }
    } else if (tokens[0] == "segment") {
      DatasetSegment s;
      s.meta.id = need("id");
      s.meta.vehicle = need("vehicle");
      s.meta.vehicle_hash = need("vehicle_hash");
      s.meta.style = style_from_string(need("style"));
      s.meta.scenario_seed = std::stoull(need("scenario_seed"));
      s.meta.noise_seed = std::stoull(need("noise_seed"));
      s.meta.rate = std::stod(need("rate"));
      s.meta.noise = parse_noise_token(need("noise"));
      const auto files = split(need("files"), ',');
      if (files.size() != kCorners) throw Error(ErrorCode::SchemaMismatch, "segment " + s.meta.id + " needs 4 files");
      const bool clean = need("clean") == "1";
      if (clean) s.clean.emplace();
      const std::size_t samples = std::stoul(need("samples"));
      for (std::size_t ci = 0; ci < kCorners; ++ci) {
        s.corners[ci] = read_series_csv(dir / files[ci]);
        if (clean) (*s.clean)[ci] = read_series_csv(dir / "clean" / files[ci]);
        if (s.corners[ci].size() != samples) {
          throw Error(ErrorCode::SchemaMismatch, files[ci] + " has " + std::to_string(s.corners[ci].size()) +
                                                     " rows, manifest says " + std::to_string(samples));
        }
      }
      ds.segments.push_back(std::move(s));
    } else {
      throw Error(ErrorCode::SchemaMismatch, "unknown manifest entry: " + line);
    }
  }
  if (!versioned) throw Error(ErrorCode::SchemaMismatch, "manifest has no version line");
  for (const auto& s : ds.segments) {
    if (ds.vehicle(s.meta.vehicle).hash() != s.meta.vehicle_hash) {
      throw Error(ErrorCode::SchemaMismatch, "segment " + s.meta.id + ": vehicle '" + s.meta.vehicle +
                                                 "' does not match the recorded hash");
    }
  }
  return ds;
}

void append_dataset(const Dataset& add, const fs::path& dir) {
  Dataset merged;
  if (fs::exists(dir / "manifest.txt")) merged = read_dataset(dir);
  for (const auto& v : add.vehicles) {
    auto it = std::find_if(merged.vehicles.begin(), merged.vehicles.end(), [&](auto& m) { return m.name == v.name; });
    if (it == merged.vehicles.end()) {
      merged.vehicles.push_back(v);
    } else if (it->hash() != v.hash()) {
      throw Error(ErrorCode::InvalidConfig, "dataset already holds a different vehicle named '" + v.name + "'");
    }
  }
  for (const auto& s : add.segments) {
    auto it = std::find_if(merged.segments.begin(), merged.segments.end(), [&](auto& m) { return m.meta.id == s.meta.id; });
    if (it == merged.segments.end()) {
      merged.segments.push_back(s);
    } else {
      *it = s;
    }
  }
  std::sort(merged.segments.begin(), merged.segments.end(), [](auto& a, auto& b) { return a.meta.id < b.meta.id; });
  std::sort(merged.vehicles.begin(), merged.vehicles.end(), [](auto& a, auto& b) { return a.name < b.name; });
  write_dataset(merged, dir);
}

}  // namespace wheelload::sim
