#pragma once

// Synthetic driving data. Corner loads come from quasi-static load transfer;
// the suspension state of each corner is then inverse-designed so that
// physics_estimate on the sensor channels reproduces that load.

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "wheelload/config.hpp"
#include "wheelload/dynamics.hpp"
#include "wheelload/frame.hpp"

namespace wheelload::sim {

enum class Style { Smooth, Aggressive };

std::string_view to_string(Style style);
Style style_from_string(std::string_view name);

enum class Corner : int { FL = 0, FR, RL, RR };
inline constexpr std::size_t kCorners = 4;
inline constexpr std::array<Corner, kCorners> kAllCorners{Corner::FL, Corner::FR, Corner::RL, Corner::RR};

std::string_view to_string(Corner corner);
Corner corner_from_string(std::string_view name);
inline bool is_left(Corner c) { return c == Corner::FL || c == Corner::RL; }
inline bool is_front(Corner c) { return c == Corner::FL || c == Corner::FR; }

struct Scenario {
  Style style = Style::Smooth;
  double duration = 20.0;  ///< s
  double rate = 100.0;     ///< Hz
  std::uint64_t seed = 0;

  /// Throws InvalidConfig unless duration * rate is a positive integer.
  std::size_t samples() const;
};

/// Peak |a| bands (m/s^2) and frequency bands (Hz) of one style.
struct StyleBand {
  double lateral_lo, lateral_hi;
  double longitudinal_lo, longitudinal_hi;
  double freq_lo, freq_hi;
  double heave_lo, heave_hi;  ///< sprung-mass vertical acceleration from road undulation
  double heave_freq_lo, heave_freq_hi;
};

StyleBand style_band(Style style);

inline constexpr double kRackPerLateral = 0.0025;  ///< m of rack per m/s^2 of lateral demand

struct Excitation {
  std::vector<double> t;
  std::vector<double> a_x;  ///< longitudinal demand (m/s^2), > 0 accelerating
  std::vector<double> a_y;  ///< lateral demand (m/s^2), > 0 turning left
  std::vector<double> x_a;  ///< rack displacement (m)
  /// Sprung-mass vertical acceleration (m/s^2), > 0 upward; empty means none.
  std::vector<double> heave;
};

/// Sum of sines plus low-passed noise per channel, scaled to a peak drawn
/// from the style band. The rack follows the lateral demand plus a small
/// independent steering component. Heave comes from road undulation under
/// the sprung mass; the springs carry it but the wheel accelerometer does
/// not see it. Deterministic per seed.
Excitation generate_scenario(const Scenario& scenario);

/// Tyre slips as a fixed function of the measured acceleration; the same
/// closure feeds the physics targets during training.
struct SlipClosure {
  double kappa_per_ax = 0.005;  ///< slip ratio per m/s^2
  double alpha_per_ay = 0.008;  ///< rad per m/s^2

  /// a_u is gravity-inclusive, so a_x = -a_u.x and a_y = -a_u.y.
  std::pair<double, double> slips(const Eigen::Vector3d& a_u) const;
};

struct VehicleParams {
  std::string name = "fs-a";
  double sprung_mass = 250.0;  ///< kg
  /// Static share of the sprung weight at FL, FR, RL, RR.
  std::array<double, kCorners> fractions{0.27, 0.23, 0.26, 0.24};
  double cg_height = 0.30;  ///< m
  double track = 1.20;      ///< m
  double wheelbase = 1.55;  ///< m
  SlipClosure slip;
  /// Left-hand corner hardware; right corners use its mirror image.
  dynamics::CornerModel corner = dynamics::CornerModel::fixture();

  void validate() const;
  dynamics::CornerModel corner_model(Corner c) const;
  double static_load(Corner c) const;
  double total_weight() const;

  /// Three Formula-Student-sized variants sharing the fixture corner.
  static VehicleParams fixture(int variant);
  /// [vehicle] and [slip] keys plus the corner hardware keys of CornerModel.
  static VehicleParams from_config(const ConfigFile& cfg);
  ConfigFile to_config() const;
  std::string hash() const { return to_config().hash(); }
};

/// Quasi-static corner loads: static share + m_u g, longitudinal transfer
/// m_s a_x h / L split over the axle, lateral transfer m_s a_y h / track per
/// side split over the axles in proportion to static axle load, and the
/// sprung-mass heave inertia m_s a_z in proportion to the static shares.
std::array<double, kCorners> corner_loads(const VehicleParams& vehicle, double a_x, double a_y, double heave = 0.0);

/// One corner's clean series.
using Series = std::vector<SensorFrame>;

struct CornerSeries {
  std::array<Series, kCorners> corners;
  std::array<std::vector<double>, kCorners> demanded;  ///< quasi-static load targets (N)
};

/// Inverse design: for every corner and sample, root-solves x_d so the
/// physics estimate matches the demanded load, with xdot_d the backward
/// difference of x_d. Fz_truth is the physics estimate of the final frame.
/// InversionFailure when no x_d in travel reaches the demand.
CornerSeries simulate_vehicle(const VehicleParams& vehicle, const Excitation& excitation);

struct NoiseSpec {
  double x_a = 0.2e-3;
  double x_d = 0.5e-3;
  double xdot_d = 5e-3;
  double a_u = 0.05;
  double slip_kappa = 0.0;
  double slip_alpha = 0.0;
  double outlier_rate = 0.0;   ///< per-sample, per-channel spike probability
  double outlier_scale = 10.0; ///< spike size in channel stds

  void validate() const;
  static NoiseSpec none();
  /// `noise.<channel>` keys; missing keys keep the defaults.
  static NoiseSpec from_config(const ConfigFile& cfg);
  ConfigFile to_config() const;
};

/// Adds Gaussian noise (and optional spikes) to the sensor channels; the
/// ground truth is left untouched.
Series inject_noise(const Series& clean, const NoiseSpec& spec, std::uint64_t seed);

struct SegmentMeta {
  std::string id;
  std::string vehicle;
  std::string vehicle_hash;
  Style style = Style::Smooth;
  std::uint64_t scenario_seed = 0;
  std::uint64_t noise_seed = 0;
  double rate = 100.0;
  NoiseSpec noise = NoiseSpec::none();
};

struct DatasetSegment {
  SegmentMeta meta;
  std::array<Series, kCorners> corners;  ///< sensor channels as measured
  std::optional<std::array<Series, kCorners>> clean;

  std::size_t samples() const { return corners[0].size(); }
};

struct Dataset {
  std::vector<DatasetSegment> segments;
  std::vector<VehicleParams> vehicles;  ///< every vehicle referenced by a segment

  const VehicleParams& vehicle(const std::string& name) const;
  /// Fingerprint of the manifest and every file it lists.
  std::string hash() const;
};

/// Simulates, keeps the clean copy and adds noise. Rear corners have no
/// rack sensor, so their x_a stays exactly zero.
DatasetSegment make_segment(const std::string& id, const VehicleParams& vehicle, const Scenario& scenario,
                            const NoiseSpec& noise, std::uint64_t noise_seed);

/// `count` segments "<vehicle>_<style>_<kk>"; scenario seeds derive from
/// (base_seed, vehicle name, style, k), never from call order.
Dataset make_style_set(const VehicleParams& vehicle, Style style, std::size_t count, const NoiseSpec& noise,
                       std::uint64_t base_seed = 1, double duration = 20.0, double rate = 100.0);

/// Fixture grid: make_style_set for every vehicle and both styles.
Dataset make_benchmark(const std::vector<VehicleParams>& vehicles, std::size_t seeds_per_style,
                       const NoiseSpec& noise, std::uint64_t base_seed = 1, double duration = 20.0);

inline constexpr int kDatasetVersion = 1;

/// Layout: manifest.txt, <segment>_<corner>.csv, vehicles/<name>.cfg and,
/// when clean copies exist, clean/<segment>_<corner>.csv.
void write_dataset(const Dataset& dataset, const std::filesystem::path& dir);
Dataset read_dataset(const std::filesystem::path& dir);

/// Adds segments to an existing dataset directory (or creates it); segments
/// with the same id are replaced. The manifest stays sorted by id.
void append_dataset(const Dataset& dataset, const std::filesystem::path& dir);

void write_series_csv(const Series& series, const std::filesystem::path& path);
Series read_series_csv(const std::filesystem::path& path);

}  // namespace wheelload::sim
