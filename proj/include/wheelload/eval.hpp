#pragma once

// Metrics, evaluation runs, comparison tables with SVG overlays, the
// ablation suite and run manifests.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "wheelload/pinn.hpp"
#include "wheelload/sim.hpp"

namespace wheelload::eval {

inline constexpr std::string_view kToolVersion = "1.0.0";

/// sqrt(mean((p - t)^2)); EmptySeries for empty input, ShapeMismatch for
/// unequal lengths.
double rmse(const std::vector<double>& predictions, const std::vector<double>& targets);

struct SeriesPair {
  std::vector<double> predictions;
  std::vector<double> targets;
};

/// Mean over segments of the per-segment max |p - t|.
double max_error(const std::vector<SeriesPair>& segments);

/// Per-sample predictive output of one segment and corner.
struct SampleDump {
  std::vector<double> t, mean, std, model_std, truth;
};

struct SegmentMetrics {
  std::string segment;
  sim::Corner corner = sim::Corner::FL;
  std::size_t samples = 0;
  double rmse = 0.0;
  double max_error = 0.0;
  double coverage = 0.0;        ///< fraction with |mean - truth| <= 2 std
  double model_coverage = 0.0;  ///< same with the network spread alone
  double min_std = 0.0;
};

struct CornerMetrics {
  sim::Corner corner = sim::Corner::FL;
  std::size_t samples = 0;
  double rmse = 0.0;       ///< pooled over every sample of the corner
  double max_error = 0.0;  ///< mean of per-segment maxima
  double coverage = 0.0;
  double model_coverage = 0.0;
};

struct MetricsReport {
  std::string label;
  std::string dataset_hash;
  std::string mode;
  std::size_t mc_samples = 0;
  std::uint64_t seed = 0;
  std::vector<SegmentMetrics> segments;
  std::vector<CornerMetrics> corners;
  std::size_t samples = 0;
  double rmse = 0.0;
  double max_error = 0.0;
  double coverage = 0.0;
  double model_coverage = 0.0;
  double min_std = 0.0;
};

/// Builds every metric from the dumps; keys are "<segment>_<corner>".
MetricsReport summarize(const std::map<std::string, SampleDump>& dumps, const std::vector<SegmentMetrics>& order);

struct Evaluation {
  MetricsReport report;
  std::map<std::string, SampleDump> samples;
};

std::string dump_key(const std::string& segment, sim::Corner corner);

/// Posterior predictive with n_samples draws per frame for every listed
/// segment, one model per corner. Each segment gets its own generator
/// derived from (seed, segment id), so results do not depend on which
/// other segments are evaluated. Metrics use the predictive mean.
Evaluation evaluate(const std::vector<pinn::Model>& models, const sim::Dataset& dataset,
                    const std::vector<std::size_t>& segments, std::size_t n_samples, std::uint64_t seed);

/// Segment indices for the given ids; SchemaMismatch for an unknown id.
std::vector<std::size_t> segment_indices(const sim::Dataset& dataset, const std::vector<std::string>& ids);

/// metrics.json plus samples/<segment>_<corner>.csv (t, mean, std, model_std, truth).
void write_evaluation(const Evaluation& evaluation, const std::filesystem::path& dir);
Evaluation read_evaluation(const std::filesystem::path& dir);

struct ComparisonRow {
  std::string label;
  double rmse = 0.0;
  double max_error = 0.0;
  double coverage = 0.0;
  double delta_rmse = 0.0;       ///< against the first evaluation passed in
  double delta_max_error = 0.0;
};

struct Comparison {
  std::vector<ComparisonRow> rows;  ///< ascending RMSE, ties by label
  std::string text;
  std::string csv;
  std::map<std::string, std::string> plots;  ///< file name -> SVG document
};

/// DatasetMismatch unless every evaluation saw the same dataset. Plots cover
/// the segments present in every evaluation.
Comparison compare(const std::vector<Evaluation>& evaluations, const std::vector<std::string>& labels);
void write_comparison(const Comparison& comparison, const std::filesystem::path& dir);

/// Overlay chart of truth, each method's mean and its +-2 std band.
std::string overlay_svg(const std::string& title, const std::vector<std::string>& labels,
                        const std::vector<const SampleDump*>& dumps);

struct AblationCell {
  pinn::AblationMode mode = pinn::AblationMode::Full;
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;
  double rmse = 0.0;
  double max_error = 0.0;
  double coverage = 0.0;
  double seconds = 0.0;
};

struct AblationTable {
  std::vector<AblationCell> cells;  ///< mode-major, seeds in the order given
  std::string text;
  std::string csv;

  const AblationCell* find(pinn::AblationMode mode, std::uint64_t seed) const;
};

using ProgressFn = std::function<void(const AblationCell&)>;

/// Trains and evaluates every mode for every seed on the held-out split.
/// A failing cell is recorded and the suite moves on. With `out`, each
/// cell's checkpoint, training report and evaluation are written under
/// out/<mode>/seed<seed>/.
AblationTable ablation_suite(const sim::Dataset& dataset, const pinn::TrainConfig& base,
                             const std::vector<std::uint64_t>& seeds, std::size_t n_samples,
                             const std::optional<std::filesystem::path>& out = std::nullopt,
                             const ProgressFn& progress = {});
AblationTable tabulate(std::vector<AblationCell> cells);

struct RunManifest {
  std::string config_hash;
  std::uint64_t train_seed = 0;
  std::uint64_t split_seed = 0;
  std::string checkpoint;  ///< relative to the manifest's directory
  std::string report;      ///< relative to the manifest's directory
  std::string dataset;     ///< dataset directory, relative to the manifest's directory or absolute
  std::string dataset_hash;
  std::string mode;
  std::string corner;
  std::vector<std::string> held_out;
  std::string tool_version = std::string(kToolVersion);
};

/// IoError when a referenced file does not exist at write time.
void write_run_manifest(const RunManifest& manifest, const std::filesystem::path& path);
RunManifest read_run_manifest(const std::filesystem::path& path);

}  // namespace wheelload::eval
