#pragma once

// Damper-B-PINN training: negative ELBO with a data term, a physics term on
// collocation points and the weight KL, optimised with Adam.
//
// All losses are computed in standardized label units. A network input row
// is [x_t, x_t - x_prev] (12 values); the first row of a series has a zero
// difference.

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "wheelload/autodiff.hpp"
#include "wheelload/bnn.hpp"
#include "wheelload/config.hpp"
#include "wheelload/dpc.hpp"
#include "wheelload/random.hpp"
#include "wheelload/sim.hpp"

namespace wheelload::pinn {

using ad::Array;
using ad::Tape;
using ad::Var;

enum class AblationMode { Full, BasicModel, NoBayes, NoDpc, NoNsDropout };
inline constexpr std::array<AblationMode, 5> kAllModes{AblationMode::Full, AblationMode::BasicModel,
                                                       AblationMode::NoBayes, AblationMode::NoDpc,
                                                       AblationMode::NoNsDropout};

std::string_view to_string(AblationMode mode);
AblationMode ablation_from_string(std::string_view name);

struct LossWeights {
  double sigma_data = 1.0;  ///< N
  double sigma_phy = 2.0;   ///< N
  void validate() const;
};

enum class CollocationStrategy { Halton, Uniform };

/// Whole-vehicle load transfer with a symmetric static split, used by the
/// basic-model ablation in place of the linkage solve.
struct BasicVehicle {
  double sprung_mass = 250.0;
  double unsprung_mass = 12.0;
  double cg_height = 0.30;
  double track = 1.20;
  double wheelbase = 1.55;
};

double basic_model_load(const BasicVehicle& vehicle, sim::Corner corner, const Eigen::Vector3d& a_u);

struct TrainConfig {
  std::size_t epochs = 20;
  std::size_t batch_size = 256;
  double learning_rate = 1e-3;
  double lr_final_ratio = 0.05;  ///< cosine decay ends at lr * ratio
  std::uint64_t seed = 0;
  std::size_t mc_samples = 1;
  AblationMode ablation = AblationMode::Full;
  std::size_t eval_samples = 64;
  sim::Corner corner = sim::Corner::FL;
  double train_fraction = 0.7;
  std::uint64_t split_seed = 0;

  bool physics = true;
  std::size_t collocation_count = 2048;
  std::size_t collocation_batch = 256;
  CollocationStrategy strategy = CollocationStrategy::Halton;

  /// <= 0: derived from the dataset (see resolve_loss_weights).
  double sigma_data = 0.0;
  double sigma_phy_ratio = 2.0;
  double label_fraction = 0.05;
  double kl_weight = 1.0;

  bnn::NetworkSpec network;
  dpc::EncoderSpec encoder;
  BasicVehicle basic;

  void validate() const;
  static TrainConfig from_config(const ConfigFile& cfg);
  ConfigFile to_config() const;
  std::string hash() const { return to_config().hash(); }
};

inline constexpr std::size_t kInputWidth = 2 * kFrameChannels;

/// [n, 12] raw feature rows of one series.
Array feature_rows(const sim::Series& series);
std::vector<double> labels(const sim::Series& series);
/// Inverse of the channel layout for the first six columns of a row.
SensorFrame frame_from_row(const double* row);

struct Standardizer {
  std::vector<double> mean = std::vector<double>(kInputWidth, 0.0);
  std::vector<double> scale = std::vector<double>(kInputWidth, 1.0);
  double y_mean = 0.0;
  double y_scale = 1.0;

  /// Constant columns get scale 1.
  static Standardizer fit(const Array& rows, const std::vector<double>& y);
  Array apply(const Array& rows) const;
};

struct Model {
  AblationMode mode = AblationMode::Full;
  sim::Corner corner = sim::Corner::FL;
  bnn::BayesianNetwork net;
  dpc::DPCEncoder encoder;
  Standardizer scaler;
  LossWeights weights;  ///< in N

  bool uses_dpc() const { return mode != AblationMode::NoDpc; }
  bool samples_weights() const { return mode != AblationMode::NoBayes; }
  bool uses_dropout() const { return mode != AblationMode::NoNsDropout; }
  bnn::ForwardOptions options(bnn::Mode m) const;

  static Model init(const TrainConfig& config, Rng& rng);
  /// Parameters the optimiser updates in this mode.
  std::vector<Array*> trainable();
  std::vector<const Array*> all_parameters() const;
};

struct ModelVars {
  bnn::NetworkVars net;
  std::optional<dpc::EncoderVars> encoder;
};

ModelVars attach(Tape& tape, const Model& model, bool trainable = true);

/// x: standardized rows [B, 12] -> standardized prediction [B, 1].
Var model_forward(const Model& model, const ModelVars& vars, Var x, Rng& rng, const bnn::ForwardOptions& options);

/// Posterior-predictive summary in N. `model_std` is the spread of the N
/// network draws; `std` adds the data-noise variance sigma_data^2.
struct Prediction {
  std::vector<double> mean, model_std, std;
};

Prediction predict(const Model& model, const Array& raw_rows, std::size_t n_samples, Rng& rng);
/// Deterministic point prediction (mean weights, expected masks), in N.
std::vector<double> predict_mean(const Model& model, const Array& raw_rows);

inline constexpr int kCheckpointVersion = 1;

std::string checkpoint_text(const Model& model);
Model parse_checkpoint(const std::string& text);
void save_checkpoint(const Model& model, const std::filesystem::path& path);
Model load_checkpoint(const std::filesystem::path& path);

/// sum [(p - t)^2 / (2 sigma^2) + log sigma + log(2 pi) / 2]
Var data_nll(Var predictions, Var targets, double sigma);
/// Same Gaussian form on collocation residuals; EmptyCollocationSet for zero rows.
Var physics_nll(Var predictions, Var targets, double sigma);

struct ElboTerms {
  Var total;    ///< data / B + physics / C + kl_weight * KL / N
  Var data;     ///< summed data NLL
  Var physics;  ///< summed physics NLL (zero when disabled)
  Var kl;       ///< KL(q || p)
};

struct ElboBatch {
  Array x;  ///< standardized data rows
  Array y;  ///< standardized labels [B, 1]
  Array xc;  ///< standardized collocation rows (may have zero rows)
  Array yc;  ///< standardized physics targets
};

/// One weight/mask draw per Monte-Carlo replicate; data and collocation rows
/// share the draw. sigmas are in standardized units.
ElboTerms elbo_loss(const Model& model, const ModelVars& vars, const ElboBatch& batch, double sigma_data,
                    double sigma_phy, std::size_t dataset_size, double kl_weight, std::size_t mc_samples, Rng& rng);

/// Axis-aligned box of the rows, widened by `inflate` of its extent per side.
struct InputBox {
  std::vector<double> lo, hi;
  static InputBox of(const Array& rows, double inflate = 0.1);
};

using PhysicsFn = std::function<double(const SensorFrame&)>;

struct CollocationSet {
  Array inputs;  ///< raw rows [C, 12]
  std::vector<double> targets;
  std::vector<bool> valid;
  double failure_ratio = 0.0;

  std::size_t valid_count() const;
};

/// PhysicsUnavailable if more than half of the points fail.
CollocationSet build_collocation(const InputBox& box, std::size_t count, CollocationStrategy strategy,
                                 const PhysicsFn& physics, std::uint64_t seed);

/// Corner model shared by every vehicle in the dataset; InvalidConfig when
/// the vehicles carry different corner hardware.
dynamics::CornerModel corner_hardware(const sim::Dataset& dataset, sim::Corner corner);

/// Linkage physics of one corner of the dataset's hardware (or the basic
/// whole-vehicle model), with slips from the vehicle's closure.
PhysicsFn make_physics(const sim::Dataset& dataset, sim::Corner corner, AblationMode mode, const BasicVehicle& basic);

struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> held_out;
};

/// Whole segments, stratified by style.
Split split_segments(const sim::Dataset& dataset, double train_fraction, std::uint64_t seed);

/// sigma_data: configured value, else the F_z-equivalent of the injected
/// sensor noise (physics_estimate on noisy vs clean copies), else
/// label_fraction * label std. sigma_phy = sigma_phy_ratio * sigma_data.
LossWeights resolve_loss_weights(const sim::Dataset& dataset, const std::vector<std::size_t>& train_segments,
                                 const TrainConfig& config);

/// RMS of physics_estimate(noisy) - physics_estimate(clean) over every
/// `stride`-th frame of the given segments' corner; nullopt without clean copies.
std::optional<double> noise_floor(const sim::Dataset& dataset, const std::vector<std::size_t>& segments,
                                  sim::Corner corner, std::size_t stride = 1);

struct EpochRecord {
  std::size_t epoch = 0;
  double data_nll = 0.0;     ///< mean per datum
  double physics_nll = 0.0;  ///< mean per collocation point
  double kl = 0.0;
  double val_rmse = 0.0;     ///< N, deterministic prediction on held-out segments
};

struct TrainReport {
  std::vector<EpochRecord> epochs;
  std::string dataset_hash;
  std::string config_hash;
  double collocation_failure_ratio = 0.0;
  LossWeights weights;
  Split split;
};

struct TrainResult {
  Model model;
  TrainReport report;
};

/// NanLoss names the epoch and batch index.
TrainResult train(const sim::Dataset& dataset, const TrainConfig& config);

void write_report_csv(const TrainReport& report, const std::filesystem::path& path);

}  // namespace wheelload::pinn
