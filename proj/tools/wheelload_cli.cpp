// wheelload: command-line front end for the wheel-load estimation pipeline.
//
// Results go to stdout or files; progress and diagnostics go to stderr,
// filtered by WHEELLOAD_VERBOSITY (quiet | normal | debug, or 0 | 1 | 2).
// Exit codes: 0 success, 2 validation or schema error, 3 numerical failure.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "wheelload/config.hpp"
#include "wheelload/dynamics.hpp"
#include "wheelload/error.hpp"
#include "wheelload/eval.hpp"
#include "wheelload/geometry.hpp"
#include "wheelload/pinn.hpp"
#include "wheelload/sim.hpp"

namespace fs = std::filesystem;
using namespace wheelload;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitInvalid = 2;
constexpr int kExitNumerical = 3;

int verbosity() {
  static const int level = [] {
    const char* env = std::getenv("WHEELLOAD_VERBOSITY");
    if (env == nullptr) return 1;
    const std::string v = env;
    if (v == "0" || v == "quiet") return 0;
    if (v == "2" || v == "debug") return 2;
    return 1;
  }();
  return level;
}

template <typename... Args>
void log(int level, const char* fmt, Args... args) {
  if (verbosity() < level) return;
  std::fprintf(stderr, fmt, args...);
  std::fputc('\n', stderr);
}

// Options every subcommand shares: `--set key=value` overrides applied to
// whatever config file the subcommand reads, and `--seed`, which wins over
// the config's seed key, which wins over the subcommand's default.
struct Common {
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* sub, Common& common) {
  sub->add_option("--set", common.overrides, "Config override key=value (repeatable)");
  sub->add_option("--seed", common.seed, "Seed; overrides the config");
}

ConfigFile load_config(const std::optional<fs::path>& path, const Common& common) {
  ConfigFile cfg = path ? ConfigFile::load(*path) : ConfigFile{};
  for (const auto& kv : common.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos || eq == 0) {
      throw Error(ErrorCode::InvalidConfig, "--set expects key=value, got '" + kv + "'");
    }
    auto trim = [](std::string s) {
      const auto a = s.find_first_not_of(" \t");
      const auto b = s.find_last_not_of(" \t");
      return a == std::string::npos ? std::string{} : s.substr(a, b - a + 1);
    };
    cfg.set(trim(kv.substr(0, eq)), trim(kv.substr(eq + 1)));
  }
  return cfg;
}

std::uint64_t resolve_seed(const Common& common, const ConfigFile& cfg, const std::string& key,
                           std::uint64_t fallback) {
  if (common.seed) return *common.seed;
  const long v = cfg.get_int(key, static_cast<long>(fallback));
  if (v < 0) throw Error(ErrorCode::InvalidConfig, key + " must be non-negative");
  return static_cast<std::uint64_t>(v);
}

void write_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
}

// ---- geometry check ---------------------------------------------------------

struct GeometryArgs {
  std::optional<fs::path> config;
  int grid = 9;
};

int run_geometry(const GeometryArgs& a, const Common& common) {
  const auto cfg = load_config(a.config, common);
  const auto geo = geometry::SuspensionConfig::from_config(cfg, "geometry");
  const auto r = geometry::check_geometry(geo, a.grid);
  const auto& l = r.lengths;
  std::printf("link lengths (m)\n");
  const std::pair<const char*, double> rows[] = {{"u1-s1", l.u1_s1}, {"u2-s1", l.u2_s1}, {"l1-s3", l.l1_s3},
                                                 {"l2-s3", l.l2_s3}, {"t-s2", l.t_s2},   {"s1-s2", l.s1_s2},
                                                 {"s2-s3", l.s2_s3}, {"s1-s3", l.s1_s3}, {"damper", l.damper}};
  for (const auto& [name, v] : rows) std::printf("  %-7s %.6f\n", name, v);
  std::printf("knuckle area        %.6e m^2\n", r.knuckle_area);
  std::printf("condition at rest   %.4e\n", r.reference_condition);
  std::printf("worst condition     %.4e\n", r.worst_condition);
  std::printf("singularity margin  %.3f decades\n", r.singularity_margin);
  return kExitOk;
}

// ---- physics run ------------------------------------------------------------

struct PhysicsArgs {
  fs::path input;
  fs::path output;
  std::optional<fs::path> config;
  std::string corner = "FL";
};

int run_physics(const PhysicsArgs& a, const Common& common) {
  const auto cfg = load_config(a.config, common);
  const auto vehicle = sim::VehicleParams::from_config(cfg);
  const auto model = vehicle.corner_model(sim::corner_from_string(a.corner));
  const auto frames = sim::read_series_csv(a.input);
  if (frames.empty()) throw Error(ErrorCode::EmptySeries, a.input.string() + " has no frames");

  std::string out = "t,fz,fz_raw,negative_load,force_residual,moment_residual,iterations,status\n";
  std::size_t failed = 0;
  for (std::size_t i = 0; i < frames.size(); ++i) {
    const auto& f = frames[i];
    try {
      const auto s = dynamics::solve_wheel_load(model, dynamics::LoadInputs::from_frame(f));
      out += format_double(f.t) + "," + format_double(s.fz) + "," + format_double(s.fz_raw) + "," +
             (s.negative_load ? "1" : "0") + "," + format_double(s.force_residual) + "," +
             format_double(s.moment_residual) + "," + std::to_string(s.iterations) + ",ok\n";
    } catch (const Error& e) {
      // Keep the batch going; the row records which failure it was.
      ++failed;
      log(2, "frame %zu: %s", i, e.what());
      out += format_double(f.t) + ",nan,nan,0,nan,nan,0," + std::string(to_string(e.code())) + "\n";
    }
  }
  write_file(a.output, out);
  log(1, "%zu frames, %zu failed -> %s", frames.size(), failed, a.output.string().c_str());
  return failed == 0 ? kExitOk : kExitNumerical;
}

// ---- simulate ---------------------------------------------------------------

struct SimulateArgs {
  fs::path vehicle;
  std::string style;
  std::size_t segments = 1;
  std::optional<fs::path> noise;
  fs::path out;
  double duration = 20.0;
  double rate = 100.0;
};

int run_simulate(const SimulateArgs& a, const Common& common) {
  const auto vcfg = load_config(a.vehicle, common);
  const auto vehicle = sim::VehicleParams::from_config(vcfg);
  const auto noise = a.noise ? sim::NoiseSpec::from_config(load_config(a.noise, common)) : sim::NoiseSpec{};
  const auto style = sim::style_from_string(a.style);
  const auto seed = resolve_seed(common, vcfg, "sim.seed", 1);
  log(1, "simulating %zu %s segments of %s (seed %llu)", a.segments, a.style.c_str(), vehicle.name.c_str(),
      static_cast<unsigned long long>(seed));
  const auto ds = sim::make_style_set(vehicle, style, a.segments, noise, seed, a.duration, a.rate);
  sim::append_dataset(ds, a.out);
  for (const auto& s : ds.segments) log(2, "  %s: %zu samples", s.meta.id.c_str(), s.samples());
  return kExitOk;
}

// ---- train ------------------------------------------------------------------

struct TrainArgs {
  fs::path data;
  std::optional<fs::path> config;
  std::optional<std::string> ablation;
  fs::path out;
};

fs::path sibling(const fs::path& checkpoint, const std::string& suffix) {
  auto p = checkpoint;
  p.replace_filename(checkpoint.stem().string() + suffix);
  return p;
}

int run_train(const TrainArgs& a, const Common& common) {
  const auto cfg = load_config(a.config, common);
  auto tc = pinn::TrainConfig::from_config(cfg);
  tc.seed = resolve_seed(common, cfg, "train.seed", 0);
  if (a.ablation) tc.ablation = pinn::ablation_from_string(*a.ablation);
  const auto dataset = sim::read_dataset(a.data);
  log(1, "training %s on %zu segments, corner %s, seed %llu", std::string(pinn::to_string(tc.ablation)).c_str(),
      dataset.segments.size(), std::string(sim::to_string(tc.corner)).c_str(),
      static_cast<unsigned long long>(tc.seed));

  const auto result = pinn::train(dataset, tc);
  for (const auto& e : result.report.epochs) {
    log(2, "epoch %zu  data %.4f  physics %.4f  kl %.1f  val_rmse %.3f N", e.epoch, e.data_nll, e.physics_nll, e.kl,
        e.val_rmse);
  }
  if (!result.report.epochs.empty()) log(1, "final val_rmse %.3f N", result.report.epochs.back().val_rmse);

  if (a.out.has_parent_path()) fs::create_directories(a.out.parent_path());
  pinn::save_checkpoint(result.model, a.out);
  const auto report = sibling(a.out, ".training.csv");
  pinn::write_report_csv(result.report, report);

  eval::RunManifest m;
  m.config_hash = result.report.config_hash;
  m.train_seed = tc.seed;
  m.split_seed = tc.split_seed;
  m.checkpoint = a.out.filename().string();
  m.report = report.filename().string();
  m.dataset = fs::relative(fs::absolute(a.data), fs::absolute(a.out).parent_path()).generic_string();
  m.dataset_hash = result.report.dataset_hash;
  m.mode = std::string(pinn::to_string(tc.ablation));
  m.corner = std::string(sim::to_string(tc.corner));
  for (auto s : result.report.split.held_out) m.held_out.push_back(dataset.segments[s].meta.id);
  eval::write_run_manifest(m, sibling(a.out, ".run.json"));
  return kExitOk;
}

// ---- evaluate ---------------------------------------------------------------

struct EvaluateArgs {
  std::vector<fs::path> models;
  std::optional<fs::path> data;
  std::string segments = "auto";
  std::size_t samples = 64;
  std::string label;
  fs::path out;
};

// A model argument is a checkpoint or a run manifest; a checkpoint picks up
// the manifest written next to it by `train`.
struct LoadedModel {
  pinn::Model model;
  std::optional<eval::RunManifest> manifest;
  fs::path manifest_dir;
};

LoadedModel load_model(const fs::path& arg) {
  LoadedModel lm;
  fs::path manifest_path;
  if (arg.extension() == ".json") {
    manifest_path = arg;
  } else if (fs::exists(sibling(arg, ".run.json"))) {
    manifest_path = sibling(arg, ".run.json");
  }
  if (!manifest_path.empty()) {
    lm.manifest = eval::read_run_manifest(manifest_path);
    lm.manifest_dir = manifest_path.parent_path();
    lm.model = pinn::load_checkpoint(lm.manifest_dir / lm.manifest->checkpoint);
  } else {
    lm.model = pinn::load_checkpoint(arg);
  }
  return lm;
}

int run_evaluate(const EvaluateArgs& a, const Common& common) {
  const auto cfg = load_config(std::nullopt, common);
  const auto seed = resolve_seed(common, cfg, "eval.seed", 0);
  std::vector<LoadedModel> loaded;
  for (const auto& p : a.models) loaded.push_back(load_model(p));
  const eval::RunManifest* manifest = loaded.front().manifest ? &*loaded.front().manifest : nullptr;

  fs::path data_dir;
  if (a.data) {
    data_dir = *a.data;
  } else if (manifest != nullptr && !manifest->dataset.empty()) {
    data_dir = loaded.front().manifest_dir / manifest->dataset;
  } else {
    throw Error(ErrorCode::InvalidConfig, "--data is required when no run manifest names the dataset");
  }
  const auto dataset = sim::read_dataset(data_dir);
  for (const auto& lm : loaded) {
    if (lm.manifest && lm.manifest->dataset_hash != dataset.hash()) {
      throw Error(ErrorCode::DatasetMismatch, "model was trained on dataset " + lm.manifest->dataset_hash +
                                                  ", " + data_dir.string() + " is " + dataset.hash());
    }
  }

  std::string which = a.segments;
  if (which == "auto") which = manifest != nullptr ? "held-out" : "all";
  std::vector<std::size_t> segments;
  if (which == "all") {
    for (std::size_t i = 0; i < dataset.segments.size(); ++i) segments.push_back(i);
  } else if (which == "held-out") {
    if (manifest == nullptr) throw Error(ErrorCode::InvalidConfig, "held-out segments need a run manifest");
    segments = eval::segment_indices(dataset, manifest->held_out);
  } else {
    throw Error(ErrorCode::InvalidConfig, "--segments must be auto, all or held-out");
  }

  std::vector<pinn::Model> models;
  for (auto& lm : loaded) models.push_back(std::move(lm.model));
  log(1, "evaluating %zu model(s) on %zu segments, N = %zu, seed %llu", models.size(), segments.size(), a.samples,
      static_cast<unsigned long long>(seed));
  auto ev = eval::evaluate(models, dataset, segments, a.samples, seed);
  ev.report.label = a.label.empty() ? ev.report.mode : a.label;
  eval::write_evaluation(ev, a.out);
  std::printf("rmse %.4f N  max_error %.4f N  coverage %.4f\n", ev.report.rmse, ev.report.max_error,
              ev.report.coverage);
  return kExitOk;
}

// ---- compare ----------------------------------------------------------------

struct CompareArgs {
  std::vector<fs::path> evals;
  std::vector<std::string> labels;
  fs::path out;
};

int run_compare(const CompareArgs& a, const Common&) {
  if (!a.labels.empty() && a.labels.size() != a.evals.size()) {
    throw Error(ErrorCode::InvalidConfig, "give one --label per --eval");
  }
  std::vector<eval::Evaluation> evs;
  std::vector<std::string> labels;
  for (std::size_t i = 0; i < a.evals.size(); ++i) {
    evs.push_back(eval::read_evaluation(a.evals[i]));
    labels.push_back(a.labels.empty() ? a.evals[i].filename().string() : a.labels[i]);
  }
  const auto cmp = eval::compare(evs, labels);
  eval::write_comparison(cmp, a.out);
  std::fputs(cmp.text.c_str(), stdout);
  return kExitOk;
}

// ---- ablate -----------------------------------------------------------------

struct AblateArgs {
  fs::path data;
  std::optional<fs::path> config;
  std::vector<std::uint64_t> seeds{0, 1, 2};
  std::size_t samples = 64;
  fs::path out;
};

int run_ablate(const AblateArgs& a, const Common& common) {
  const auto cfg = load_config(a.config, common);
  const auto base = pinn::TrainConfig::from_config(cfg);
  auto seeds = a.seeds;
  if (common.seed) seeds = {*common.seed};
  const auto dataset = sim::read_dataset(a.data);
  const auto table = eval::ablation_suite(dataset, base, seeds, a.samples, a.out, [](const eval::AblationCell& c) {
    if (c.ok) {
      log(1, "%-12s seed %llu  rmse %.3f N  (%.0f s)", std::string(pinn::to_string(c.mode)).c_str(),
          static_cast<unsigned long long>(c.seed), c.rmse, c.seconds);
    } else {
      log(1, "%-12s seed %llu  failed: %s", std::string(pinn::to_string(c.mode)).c_str(),
          static_cast<unsigned long long>(c.seed), c.error.c_str());
    }
  });
  std::fputs(table.text.c_str(), stdout);
  for (const auto& c : table.cells) {
    if (!c.ok) return kExitNumerical;
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Wheel-load estimation: linkage physics, simulation and Bayesian PINN training"};
  app.require_subcommand(1);
  Common common;

  auto* geometry = app.add_subcommand("geometry", "Suspension geometry tools");
  geometry->require_subcommand(1);
  GeometryArgs geo_args;
  auto* geo_check = geometry->add_subcommand("check", "Print link lengths and singularity margin");
  geo_check->add_option("--config", geo_args.config, "Config with geometry.* keys (default: reference corner)")
      ->check(CLI::ExistingFile);
  geo_check->add_option("--grid", geo_args.grid, "Travel grid points per axis")->check(CLI::Range(2, 101));
  add_common(geo_check, common);

  auto* physics = app.add_subcommand("physics", "Linkage physics tools");
  physics->require_subcommand(1);
  PhysicsArgs phy_args;
  auto* phy_run = physics->add_subcommand("run", "Batch wheel-load estimate for a frames CSV");
  phy_run->add_option("--input", phy_args.input, "Frames CSV")->required()->check(CLI::ExistingFile);
  phy_run->add_option("--output", phy_args.output, "Loads CSV")->required();
  phy_run->add_option("--config", phy_args.config, "Vehicle or corner config")->check(CLI::ExistingFile);
  phy_run->add_option("--corner", phy_args.corner, "FL, FR, RL or RR");
  add_common(phy_run, common);

  SimulateArgs sim_args;
  auto* simulate = app.add_subcommand("simulate", "Generate synthetic segments into a dataset directory");
  simulate->add_option("--vehicle", sim_args.vehicle, "Vehicle config")->required()->check(CLI::ExistingFile);
  simulate->add_option("--style", sim_args.style, "smooth or aggressive")->required();
  simulate->add_option("--segments", sim_args.segments, "Segment count")->required()->check(CLI::PositiveNumber);
  simulate->add_option("--noise", sim_args.noise, "Noise spec file")->check(CLI::ExistingFile);
  simulate->add_option("--out", sim_args.out, "Dataset directory")->required();
  simulate->add_option("--duration", sim_args.duration, "Seconds per segment")->check(CLI::PositiveNumber);
  simulate->add_option("--rate", sim_args.rate, "Sample rate (Hz)")->check(CLI::PositiveNumber);
  add_common(simulate, common);

  TrainArgs train_args;
  auto* train = app.add_subcommand("train", "Train one corner's model");
  train->add_option("--data", train_args.data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  train->add_option("--config", train_args.config, "Training config")->check(CLI::ExistingFile);
  train->add_option("--ablation", train_args.ablation, "full|basic-model|no-bayes|no-dpc|no-nsdropout");
  train->add_option("--out", train_args.out, "Checkpoint path")->required();
  add_common(train, common);

  EvaluateArgs eval_args;
  auto* evaluate = app.add_subcommand("evaluate", "Posterior-predictive metrics and sample dumps");
  evaluate->add_option("--model", eval_args.models, "Checkpoint or run manifest (one per corner)")
      ->required()
      ->check(CLI::ExistingFile);
  evaluate->add_option("--data", eval_args.data, "Dataset directory (default: from the run manifest)")
      ->check(CLI::ExistingDirectory);
  evaluate->add_option("--segments", eval_args.segments, "auto, all or held-out");
  evaluate->add_option("--samples", eval_args.samples, "Posterior draws per frame")->check(CLI::PositiveNumber);
  evaluate->add_option("--label", eval_args.label, "Report label");
  evaluate->add_option("--out", eval_args.out, "Output directory")->required();
  add_common(evaluate, common);

  CompareArgs cmp_args;
  auto* compare = app.add_subcommand("compare", "Table and overlay plots of several evaluations");
  compare->add_option("--eval", cmp_args.evals, "Evaluation directory (repeatable)")
      ->required()
      ->check(CLI::ExistingDirectory);
  compare->add_option("--label", cmp_args.labels, "Label per evaluation");
  compare->add_option("--out", cmp_args.out, "Output directory")->required();
  add_common(compare, common);

  AblateArgs abl_args;
  auto* ablate = app.add_subcommand("ablate", "Train and evaluate every ablation mode over several seeds");
  ablate->add_option("--data", abl_args.data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  ablate->add_option("--config", abl_args.config, "Training config")->check(CLI::ExistingFile);
  ablate->add_option("--seeds", abl_args.seeds, "Seeds")->delimiter(',');
  ablate->add_option("--samples", abl_args.samples, "Posterior draws per frame")->check(CLI::PositiveNumber);
  ablate->add_option("--out", abl_args.out, "Output directory")->required();
  add_common(ablate, common);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitInvalid;
  }

  try {
    if (*geo_check) return run_geometry(geo_args, common);
    if (*phy_run) return run_physics(phy_args, common);
    if (*simulate) return run_simulate(sim_args, common);
    if (*train) return run_train(train_args, common);
    if (*evaluate) return run_evaluate(eval_args, common);
    if (*compare) return run_compare(cmp_args, common);
    if (*ablate) return run_ablate(abl_args, common);
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return is_numerical(e.code()) ? kExitNumerical : kExitInvalid;
  } catch (const std::exception& e) {
    // Filesystem and parse failures from the standard library are input problems.
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitInvalid;
  }
  return kExitInvalid;
}
