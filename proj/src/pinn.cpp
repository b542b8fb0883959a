#include "wheelload/pinn.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <sstream>

#include "wheelload/dynamics.hpp"
#include "wheelload/error.hpp"

namespace wheelload::pinn {

namespace fs = std::filesystem;

std::string_view to_string(AblationMode mode) {
  switch (mode) {
    case AblationMode::Full: return "full";
    case AblationMode::BasicModel: return "basic-model";
    case AblationMode::NoBayes: return "no-bayes";
    case AblationMode::NoDpc: return "no-dpc";
    case AblationMode::NoNsDropout: return "no-nsdropout";
  }
  return "?";
}

AblationMode ablation_from_string(std::string_view name) {
  for (auto m : kAllModes) {
    if (to_string(m) == name) return m;
  }
  throw Error(ErrorCode::InvalidConfig,
              "unknown ablation '" + std::string(name) + "' (full|basic-model|no-bayes|no-dpc|no-nsdropout)");
}

void LossWeights::validate() const {
  if (!(sigma_data > 0.0) || !(sigma_phy > 0.0) || !std::isfinite(sigma_data) || !std::isfinite(sigma_phy)) {
    throw Error(ErrorCode::InvalidConfig, "sigma_data and sigma_phy must be positive");
  }
}

double basic_model_load(const BasicVehicle& v, sim::Corner corner, const Eigen::Vector3d& a_u) {
  const double a_x = -a_u.x(), a_y = -a_u.y();
  const double side = sim::is_left(corner) ? -1.0 : 1.0;
  const double lon = (sim::is_front(corner) ? -0.5 : 0.5) * v.sprung_mass * a_x * v.cg_height / v.wheelbase;
  const double lat = side * 0.5 * v.sprung_mass * a_y * v.cg_height / v.track;
  return 0.25 * v.sprung_mass * kGravity + v.unsprung_mass * kGravity + lon + lat;
}

// ---- configuration ------------------------------------------------------

void TrainConfig::validate() const {
  if (batch_size == 0 || mc_samples == 0 || eval_samples < 2) {
    throw Error(ErrorCode::InvalidConfig, "batch size and MC samples must be positive, eval samples >= 2");
  }
  if (!(learning_rate > 0.0) || !(lr_final_ratio >= 0.0 && lr_final_ratio <= 1.0)) {
    throw Error(ErrorCode::InvalidConfig, "learning rate must be positive, final ratio in [0, 1]");
  }
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw Error(ErrorCode::InvalidConfig, "train fraction must lie in (0, 1)");
  }
  if (physics && (collocation_count == 0 || collocation_batch == 0)) {
    throw Error(ErrorCode::InvalidConfig, "physics loss needs collocation points");
  }
  if (!(sigma_phy_ratio > 0.0) || !(label_fraction > 0.0) || !(kl_weight >= 0.0)) {
    throw Error(ErrorCode::InvalidConfig, "loss scales must be positive");
  }
  network.validate();
  encoder.validate();
  if (network.input_width != kInputWidth || network.output_width != 1) {
    throw Error(ErrorCode::InvalidConfig, "network must map 12 inputs to 1 output");
  }
  if (encoder.state_width != kFrameChannels || encoder.film_widths != network.hidden) {
    throw Error(ErrorCode::InvalidConfig, "encoder must condition every hidden layer of the network");
  }
}

namespace {

std::vector<std::size_t> size_list(const ConfigFile& cfg, const std::string& key, std::vector<std::size_t> fallback) {
  if (!cfg.has(key)) return fallback;
  std::vector<std::size_t> out;
  for (double v : cfg.get_list(key)) {
    if (!(v >= 1.0) || v != std::floor(v)) throw Error(ErrorCode::InvalidConfig, key + " must hold positive integers");
    out.push_back(static_cast<std::size_t>(v));
  }
  return out;
}

std::string list_text(const std::vector<std::size_t>& v) {
  std::string out = "[";
  for (std::size_t i = 0; i < v.size(); ++i) out += std::to_string(v[i]) + (i + 1 < v.size() ? ", " : "");
  return out + "]";
}

std::size_t count_key(const ConfigFile& cfg, const std::string& key, std::size_t fallback) {
  const long v = cfg.get_int(key, static_cast<long>(fallback));
  if (v < 0) throw Error(ErrorCode::InvalidConfig, key + " must be >= 0");
  return static_cast<std::size_t>(v);
}

}  // namespace

TrainConfig TrainConfig::from_config(const ConfigFile& cfg) {
  TrainConfig c;
  c.epochs = count_key(cfg, "train.epochs", c.epochs);
  c.batch_size = count_key(cfg, "train.batch_size", c.batch_size);
  c.learning_rate = cfg.get_double("train.learning_rate", c.learning_rate);
  c.lr_final_ratio = cfg.get_double("train.lr_final_ratio", c.lr_final_ratio);
  c.seed = count_key(cfg, "train.seed", c.seed);
  c.mc_samples = count_key(cfg, "train.mc_samples", c.mc_samples);
  c.ablation = ablation_from_string(cfg.get_string("train.ablation", std::string(to_string(c.ablation))));
  c.eval_samples = count_key(cfg, "train.eval_samples", c.eval_samples);
  c.corner = sim::corner_from_string(cfg.get_string("train.corner", std::string(sim::to_string(c.corner))));
  c.train_fraction = cfg.get_double("train.train_fraction", c.train_fraction);
  c.split_seed = count_key(cfg, "train.split_seed", c.split_seed);

  c.physics = cfg.get_bool("collocation.enabled", c.physics);
  c.collocation_count = count_key(cfg, "collocation.count", c.collocation_count);
  c.collocation_batch = count_key(cfg, "collocation.batch", c.collocation_batch);
  const std::string strategy = cfg.get_string("collocation.strategy", "halton");
  if (strategy == "halton") {
    c.strategy = CollocationStrategy::Halton;
  } else if (strategy == "uniform") {
    c.strategy = CollocationStrategy::Uniform;
  } else {
    throw Error(ErrorCode::InvalidConfig, "collocation.strategy must be halton or uniform");
  }

  c.sigma_data = cfg.get_double("loss.sigma_data", c.sigma_data);
  c.sigma_phy_ratio = cfg.get_double("loss.sigma_phy_ratio", c.sigma_phy_ratio);
  c.label_fraction = cfg.get_double("loss.label_fraction", c.label_fraction);
  c.kl_weight = cfg.get_double("loss.kl_weight", c.kl_weight);

  c.network.hidden = size_list(cfg, "network.hidden", c.network.hidden);
  c.network.prior.tau = cfg.get_double("network.prior_tau", c.network.prior.tau);
  c.network.init_sigma_ratio = cfg.get_double("network.init_sigma_ratio", c.network.init_sigma_ratio);
  c.network.dropout.sigma = cfg.get_double("dropout.sigma", c.network.dropout.sigma);
  c.network.dropout.active_in_inference = cfg.get_bool("dropout.inference", c.network.dropout.active_in_inference);
  c.encoder.d_hidden = size_list(cfg, "encoder.d_hidden", c.encoder.d_hidden);
  c.encoder.g_hidden = size_list(cfg, "encoder.g_hidden", c.encoder.g_hidden);
  c.encoder.d_width = count_key(cfg, "encoder.d_width", c.encoder.d_width);
  c.encoder.film_widths = c.network.hidden;

  c.basic.sprung_mass = cfg.get_double("basic.m_s", c.basic.sprung_mass);
  c.basic.unsprung_mass = cfg.get_double("basic.m_u", c.basic.unsprung_mass);
  c.basic.cg_height = cfg.get_double("basic.cg_height", c.basic.cg_height);
  c.basic.track = cfg.get_double("basic.track", c.basic.track);
  c.basic.wheelbase = cfg.get_double("basic.wheelbase", c.basic.wheelbase);
  c.validate();
  return c;
}

ConfigFile TrainConfig::to_config() const {
  ConfigFile cfg;
  cfg.set("train.epochs", std::to_string(epochs));
  cfg.set("train.batch_size", std::to_string(batch_size));
  cfg.set("train.learning_rate", format_double(learning_rate));
  cfg.set("train.lr_final_ratio", format_double(lr_final_ratio));
  cfg.set("train.seed", std::to_string(seed));
  cfg.set("train.mc_samples", std::to_string(mc_samples));
  cfg.set("train.ablation", std::string(to_string(ablation)));
  cfg.set("train.eval_samples", std::to_string(eval_samples));
  cfg.set("train.corner", std::string(sim::to_string(corner)));
  cfg.set("train.train_fraction", format_double(train_fraction));
  cfg.set("train.split_seed", std::to_string(split_seed));
  cfg.set("collocation.enabled", physics ? "true" : "false");
  cfg.set("collocation.count", std::to_string(collocation_count));
  cfg.set("collocation.batch", std::to_string(collocation_batch));
  cfg.set("collocation.strategy", strategy == CollocationStrategy::Halton ? "halton" : "uniform");
  cfg.set("loss.sigma_data", format_double(sigma_data));
  cfg.set("loss.sigma_phy_ratio", format_double(sigma_phy_ratio));
  cfg.set("loss.label_fraction", format_double(label_fraction));
  cfg.set("loss.kl_weight", format_double(kl_weight));
  cfg.set("network.hidden", list_text(network.hidden));
  cfg.set("network.prior_tau", format_double(network.prior.tau));
  cfg.set("network.init_sigma_ratio", format_double(network.init_sigma_ratio));
  cfg.set("dropout.sigma", format_double(network.dropout.sigma));
  cfg.set("dropout.inference", network.dropout.active_in_inference ? "true" : "false");
  cfg.set("encoder.d_hidden", list_text(encoder.d_hidden));
  cfg.set("encoder.g_hidden", list_text(encoder.g_hidden));
  cfg.set("encoder.d_width", std::to_string(encoder.d_width));
  cfg.set("basic.m_s", format_double(basic.sprung_mass));
  cfg.set("basic.m_u", format_double(basic.unsprung_mass));
  cfg.set("basic.cg_height", format_double(basic.cg_height));
  cfg.set("basic.track", format_double(basic.track));
  cfg.set("basic.wheelbase", format_double(basic.wheelbase));
  return cfg;
}

// ---- features -----------------------------------------------------------

Array feature_rows(const sim::Series& series) {
  Array rows({series.size(), kInputWidth});
  for (std::size_t i = 0; i < series.size(); ++i) {
    const auto now = series[i].channels();
    const auto prev = series[i == 0 ? 0 : i - 1].channels();
    for (std::size_t k = 0; k < kFrameChannels; ++k) {
      rows[i * kInputWidth + k] = now[k];
      rows[i * kInputWidth + kFrameChannels + k] = now[k] - prev[k];
    }
  }
  return rows;
}

std::vector<double> labels(const sim::Series& series) {
  std::vector<double> y;
  y.reserve(series.size());
  for (const auto& f : series) {
    if (!f.fz_truth) throw Error(ErrorCode::SchemaMismatch, "frame at t=" + format_double(f.t) + " has no Fz_truth");
    y.push_back(*f.fz_truth);
  }
  return y;
}

SensorFrame frame_from_row(const double* row) {
  SensorFrame f;
  f.x_a = row[0];
  f.x_d = row[1];
  f.xdot_d = row[2];
  f.a_u = Eigen::Vector3d(row[3], row[4], row[5]);
  return f;
}

Standardizer Standardizer::fit(const Array& rows, const std::vector<double>& y) {
  const std::size_t n = rows.dim(0);
  if (n == 0 || y.size() != n) throw Error(ErrorCode::ShapeMismatch, "standardizer needs matching non-empty rows and labels");
  Standardizer s;
  auto moments = [&](auto get) {
    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) mean += get(i);
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t i = 0; i < n; ++i) var += (get(i) - mean) * (get(i) - mean);
    const double sd = std::sqrt(var / static_cast<double>(n));
    return std::pair{mean, sd > 1e-12 ? sd : 1.0};
  };
  for (std::size_t k = 0; k < kInputWidth; ++k) {
    std::tie(s.mean[k], s.scale[k]) = moments([&](std::size_t i) { return rows[i * kInputWidth + k]; });
  }
  std::tie(s.y_mean, s.y_scale) = moments([&](std::size_t i) { return y[i]; });
  return s;
}

Array Standardizer::apply(const Array& rows) const {
  if (rows.rank() != 2 || rows.dim(1) != kInputWidth) {
    throw Error(ErrorCode::ShapeMismatch, "standardizer expects [n, 12] rows, got " + ad::to_string(rows.shape()));
  }
  Array out(rows.shape());
  for (std::size_t i = 0; i < rows.dim(0); ++i) {
    for (std::size_t k = 0; k < kInputWidth; ++k) {
      out[i * kInputWidth + k] = (rows[i * kInputWidth + k] - mean[k]) / scale[k];
    }
  }
  return out;
}

// ---- model --------------------------------------------------------------

bnn::ForwardOptions Model::options(bnn::Mode m) const {
  return {m, samples_weights(), uses_dropout(), m == bnn::Mode::Sampled};
}

Model Model::init(const TrainConfig& config, Rng& rng) {
  config.validate();
  Model m;
  m.mode = config.ablation;
  m.corner = config.corner;
  m.net = bnn::BayesianNetwork::init(config.network, rng);
  m.encoder = dpc::DPCEncoder::init(config.encoder, rng);
  return m;
}

std::vector<Array*> Model::trainable() {
  std::vector<Array*> out;
  for (auto& l : net.layers) {
    out.push_back(&l.weight_mu);
    if (samples_weights()) out.push_back(&l.weight_rho);
    out.push_back(&l.bias_mu);
    if (samples_weights()) out.push_back(&l.bias_rho);
  }
  if (uses_dpc()) {
    for (auto* p : encoder.parameters()) out.push_back(p);
  }
  return out;
}

std::vector<const Array*> Model::all_parameters() const {
  auto out = net.parameters();
  for (const auto* p : encoder.parameters()) out.push_back(p);
  return out;
}

ModelVars attach(Tape& tape, const Model& model, bool trainable) {
  ModelVars vars;
  vars.net = bnn::attach(tape, model.net, trainable);
  if (model.uses_dpc()) vars.encoder = dpc::attach(tape, model.encoder, trainable);
  return vars;
}

namespace {

// Vars in the order of Model::trainable().
std::vector<Var> trainable_vars(const Model& model, const ModelVars& vars) {
  std::vector<Var> out;
  for (const auto& l : vars.net.layers) {
    out.push_back(l.weight_mu);
    if (model.samples_weights()) out.push_back(l.weight_rho);
    out.push_back(l.bias_mu);
    if (model.samples_weights()) out.push_back(l.bias_rho);
  }
  if (vars.encoder) {
    for (const auto& l : vars.encoder->mlp_d) {
      out.push_back(l.weight);
      out.push_back(l.bias);
    }
    for (const auto& l : vars.encoder->mlp_g) {
      out.push_back(l.weight);
      out.push_back(l.bias);
    }
    out.push_back(vars.encoder->output.weight);
    out.push_back(vars.encoder->output.bias);
  }
  return out;
}

}  // namespace

Var model_forward(const Model& model, const ModelVars& vars, Var x, Rng& rng, const bnn::ForwardOptions& options) {
  if (!model.uses_dpc()) return bnn::forward(model.net.spec, vars.net, nullptr, x, rng, options);
  if (!vars.encoder) throw Error(ErrorCode::ShapeMismatch, "conditioned model attached without its encoder");
  const Var x_t = ad::slice(x, 1, 0, kFrameChannels);
  const Var delta = ad::slice(x, 1, kFrameChannels, kFrameChannels);
  const dpc::FiLMParams film = dpc::encode(*vars.encoder, model.encoder.spec, x_t, delta);
  return bnn::forward(model.net.spec, vars.net, &film, x, rng, options);
}

Prediction predict(const Model& model, const Array& raw_rows, std::size_t n_samples, Rng& rng) {
  const Array x = model.scaler.apply(raw_rows);
  bnn::FiLMArrays film;
  if (model.uses_dpc()) {
    Tape tape;
    const auto enc = dpc::attach(tape, model.encoder, false);
    const Var xv = tape.constant(x);
    const auto params = dpc::encode(enc, model.encoder.spec, ad::slice(xv, 1, 0, kFrameChannels),
                                    ad::slice(xv, 1, kFrameChannels, kFrameChannels));
    for (const auto& g : params.gamma) film.gamma.push_back(g.value());
    for (const auto& b : params.beta) film.beta.push_back(b.value());
  }
  const auto post = bnn::predictive_posterior(model.net, model.uses_dpc() ? &film : nullptr, x, n_samples, rng,
                                              model.options(bnn::Mode::Sampled));
  Prediction p;
  const double ys = model.scaler.y_scale;
  const double noise_var = model.weights.sigma_data * model.weights.sigma_data;
  for (std::size_t i = 0; i < post.mean.size(); ++i) {
    p.mean.push_back(post.mean[i] * ys + model.scaler.y_mean);
    const double s = post.std[i] * ys;
    p.model_std.push_back(s);
    p.std.push_back(std::sqrt(s * s + noise_var));
  }
  return p;
}

std::vector<double> predict_mean(const Model& model, const Array& raw_rows) {
  Tape tape;
  const ModelVars vars = attach(tape, model, false);
  Rng unused(0);
  const Array& y =
      model_forward(model, vars, tape.constant(model.scaler.apply(raw_rows)), unused, model.options(bnn::Mode::Mean))
          .value();
  std::vector<double> out;
  out.reserve(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) out.push_back(y[i] * model.scaler.y_scale + model.scaler.y_mean);
  return out;
}

// ---- checkpoint ---------------------------------------------------------

namespace {

constexpr const char* kCheckpointMagic = "wheelload-checkpoint";

std::string hexf(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%a", v);
  return buf;
}

double parse_hexf(const std::string& s) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size()) throw Error(ErrorCode::SchemaMismatch, "checkpoint: bad number '" + s + "'");
  return v;
}

std::string sizes_text(const std::vector<std::size_t>& v) {
  std::string out;
  for (auto x : v) out += " " + std::to_string(x);
  return out;
}

// Dims joined by 'x' so the token has no spaces.
std::string shape_token(const ad::Shape& shape) {
  std::string out;
  for (std::size_t i = 0; i < shape.size(); ++i) out += (i ? "x" : "") + std::to_string(shape[i]);
  return out.empty() ? "scalar" : out;
}

std::vector<std::pair<std::string, const Array*>> named_arrays(const Model& m) {
  std::vector<std::pair<std::string, const Array*>> out;
  for (std::size_t i = 0; i < m.net.layers.size(); ++i) {
    const auto& l = m.net.layers[i];
    const std::string p = "net." + std::to_string(i) + ".";
    out.emplace_back(p + "weight_mu", &l.weight_mu);
    out.emplace_back(p + "weight_rho", &l.weight_rho);
    out.emplace_back(p + "bias_mu", &l.bias_mu);
    out.emplace_back(p + "bias_rho", &l.bias_rho);
  }
  const auto enc = m.encoder.parameters();
  for (std::size_t i = 0; i < enc.size(); ++i) out.emplace_back("encoder." + std::to_string(i), enc[i]);
  return out;
}

}  // namespace

std::string checkpoint_text(const Model& m) {
  std::ostringstream out;
  const auto& ns = m.net.spec;
  const auto& es = m.encoder.spec;
  out << kCheckpointMagic << "\n";
  out << "version " << kCheckpointVersion << "\n";
  out << "mode " << to_string(m.mode) << "\n";
  out << "corner " << sim::to_string(m.corner) << "\n";
  out << "sigma_data " << hexf(m.weights.sigma_data) << "\n";
  out << "sigma_phy " << hexf(m.weights.sigma_phy) << "\n";
  out << "network.input_width " << ns.input_width << "\n";
  out << "network.hidden" << sizes_text(ns.hidden) << "\n";
  out << "network.output_width " << ns.output_width << "\n";
  out << "network.prior_tau " << hexf(ns.prior.tau) << "\n";
  out << "network.init_sigma_ratio " << hexf(ns.init_sigma_ratio) << "\n";
  out << "dropout.sigma " << hexf(ns.dropout.sigma) << "\n";
  out << "dropout.inference " << (ns.dropout.active_in_inference ? 1 : 0) << "\n";
  out << "encoder.state_width " << es.state_width << "\n";
  out << "encoder.d_hidden" << sizes_text(es.d_hidden) << "\n";
  out << "encoder.d_width " << es.d_width << "\n";
  out << "encoder.g_hidden" << sizes_text(es.g_hidden) << "\n";
  out << "encoder.film_widths" << sizes_text(es.film_widths) << "\n";
  auto row = [&](const char* key, const std::vector<double>& v) {
    out << key;
    for (double x : v) out << " " << hexf(x);
    out << "\n";
  };
  row("scaler.mean", m.scaler.mean);
  row("scaler.scale", m.scaler.scale);
  row("scaler.y", {m.scaler.y_mean, m.scaler.y_scale});
  for (const auto& [name, a] : named_arrays(m)) {
    out << "array " << name << " " << shape_token(a->shape());
    for (double x : a->values()) out << " " << hexf(x);
    out << "\n";
  }
  out << "end\n";
  return out.str();
}

Model parse_checkpoint(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != kCheckpointMagic) {
    throw Error(ErrorCode::SchemaMismatch, "not a wheelload checkpoint");
  }
  std::map<std::string, std::vector<std::string>> fields;
  std::map<std::string, std::vector<std::string>> arrays;
  bool ended = false;
  while (std::getline(in, line)) {
    if (line == "end") {
      ended = true;
      break;
    }
    std::istringstream ls(line);
    std::string key, tok;
    ls >> key;
    std::vector<std::string> toks;
    while (ls >> tok) toks.push_back(tok);
    if (key == "array") {
      if (toks.size() < 2) throw Error(ErrorCode::SchemaMismatch, "checkpoint: malformed array line");
      const std::string name = toks[0];
      arrays[name] = std::vector<std::string>(toks.begin() + 1, toks.end());
    } else {
      fields[key] = toks;
    }
  }
  auto field = [&](const std::string& key) -> const std::vector<std::string>& {
    auto it = fields.find(key);
    if (it == fields.end()) throw Error(ErrorCode::SchemaMismatch, "checkpoint lacks '" + key + "'");
    return it->second;
  };
  if (field("version").size() != 1 || field("version")[0] != std::to_string(kCheckpointVersion)) {
    throw Error(ErrorCode::CheckpointVersion, "checkpoint version " +
                                                  (field("version").empty() ? std::string("?") : field("version")[0]) +
                                                  ", this build reads " + std::to_string(kCheckpointVersion));
  }
  if (!ended) throw Error(ErrorCode::SchemaMismatch, "checkpoint is truncated");
  auto one = [&](const std::string& key) {
    const auto& v = field(key);
    if (v.size() != 1) throw Error(ErrorCode::SchemaMismatch, "checkpoint field '" + key + "' needs one value");
    return v[0];
  };
  auto sizes = [&](const std::string& key) {
    std::vector<std::size_t> out;
    for (const auto& t : field(key)) out.push_back(std::stoul(t));
    return out;
  };
  auto doubles = [&](const std::string& key) {
    std::vector<double> out;
    for (const auto& t : field(key)) out.push_back(parse_hexf(t));
    return out;
  };

  Model m;
  m.mode = ablation_from_string(one("mode"));
  m.corner = sim::corner_from_string(one("corner"));
  m.weights = {parse_hexf(one("sigma_data")), parse_hexf(one("sigma_phy"))};
  bnn::NetworkSpec ns;
  ns.input_width = std::stoul(one("network.input_width"));
  ns.hidden = sizes("network.hidden");
  ns.output_width = std::stoul(one("network.output_width"));
  ns.prior.tau = parse_hexf(one("network.prior_tau"));
  ns.init_sigma_ratio = parse_hexf(one("network.init_sigma_ratio"));
  ns.dropout.sigma = parse_hexf(one("dropout.sigma"));
  ns.dropout.active_in_inference = one("dropout.inference") == "1";
  ns.validate();
  dpc::EncoderSpec es;
  es.state_width = std::stoul(one("encoder.state_width"));
  es.d_hidden = sizes("encoder.d_hidden");
  es.d_width = std::stoul(one("encoder.d_width"));
  es.g_hidden = sizes("encoder.g_hidden");
  es.film_widths = sizes("encoder.film_widths");
  es.validate();

  // Build the shapes from the specs, then fill.
  Rng rng(0);
  m.net = bnn::BayesianNetwork::init(ns, rng);
  m.encoder = dpc::DPCEncoder::init(es, rng);
  m.scaler.mean = doubles("scaler.mean");
  m.scaler.scale = doubles("scaler.scale");
  const auto y = doubles("scaler.y");
  if (m.scaler.mean.size() != kInputWidth || m.scaler.scale.size() != kInputWidth || y.size() != 2) {
    throw Error(ErrorCode::SchemaMismatch, "checkpoint scaler has the wrong width");
  }
  m.scaler.y_mean = y[0];
  m.scaler.y_scale = y[1];

  std::vector<std::pair<std::string, Array*>> targets;
  for (const auto& [name, a] : named_arrays(m)) targets.emplace_back(name, const_cast<Array*>(a));
  if (arrays.size() != targets.size()) {
    throw Error(ErrorCode::SchemaMismatch, "checkpoint has " + std::to_string(arrays.size()) + " arrays, spec needs " +
                                               std::to_string(targets.size()));
  }
  for (auto& [name, a] : targets) {
    auto it = arrays.find(name);
    if (it == arrays.end()) throw Error(ErrorCode::SchemaMismatch, "checkpoint lacks array '" + name + "'");
    const auto& toks = it->second;
    if (toks[0] != shape_token(a->shape()) || toks.size() != a->size() + 1) {
      throw Error(ErrorCode::SchemaMismatch, "checkpoint array '" + name + "' has shape " + toks[0] + ", expected " +
                                                 shape_token(a->shape()));
    }
    for (std::size_t i = 0; i < a->size(); ++i) (*a)[i] = parse_hexf(toks[i + 1]);
  }
  return m;
}

void save_checkpoint(const Model& model, const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  f << checkpoint_text(model);
  if (!f) throw Error(ErrorCode::IoError, "write failed for " + path.string());
}

Model load_checkpoint(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorCode::IoError, "cannot read " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return parse_checkpoint(ss.str());
}

// ---- losses -------------------------------------------------------------

namespace {

Var gaussian_nll(Var p, Var t, double sigma) {
  if (p.shape() != t.shape()) {
    throw Error(ErrorCode::ShapeMismatch, "predictions " + ad::to_string(p.shape()) + " vs targets " +
                                              ad::to_string(t.shape()));
  }
  if (!(sigma > 0.0)) throw Error(ErrorCode::InvalidConfig, "noise scale must be positive");
  const double n = static_cast<double>(p.value().size());
  const Var quad = ad::scale(ad::sum(ad::square(p - t)), 1.0 / (2.0 * sigma * sigma));
  return ad::add_scalar(quad, n * (std::log(sigma) + 0.5 * std::log(2.0 * std::numbers::pi)));
}

}  // namespace

Var data_nll(Var predictions, Var targets, double sigma) { return gaussian_nll(predictions, targets, sigma); }

Var physics_nll(Var predictions, Var targets, double sigma) {
  if (predictions.value().size() == 0) throw Error(ErrorCode::EmptyCollocationSet, "no valid collocation points");
  return gaussian_nll(predictions, targets, sigma);
}

ElboTerms elbo_loss(const Model& model, const ModelVars& vars, const ElboBatch& batch, double sigma_data,
                    double sigma_phy, std::size_t dataset_size, double kl_weight, std::size_t mc_samples, Rng& rng) {
  if (mc_samples == 0 || dataset_size == 0) throw Error(ErrorCode::InvalidConfig, "MC samples and dataset size must be positive");
  Tape& tape = *vars.net.layers.front().weight_mu.tape();
  const std::size_t B = batch.x.dim(0);
  const std::size_t C = batch.xc.rank() == 2 ? batch.xc.dim(0) : 0;
  Array rows = batch.x;
  if (C > 0) {
    std::vector<double> all(batch.x.values());
    all.insert(all.end(), batch.xc.values().begin(), batch.xc.values().end());
    rows = Array({B + C, kInputWidth}, std::move(all));
  }
  const Var x = tape.constant(rows);
  const Var y = tape.constant(batch.y);
  const Var yc = C > 0 ? tape.constant(batch.yc) : y;

  std::optional<Var> data, phys;
  for (std::size_t s = 0; s < mc_samples; ++s) {
    const Var out = model_forward(model, vars, x, rng, model.options(bnn::Mode::Sampled));
    const Var d = data_nll(C > 0 ? ad::slice(out, 0, 0, B) : out, y, sigma_data);
    data = data ? *data + d : d;
    if (C > 0) {
      const Var p = physics_nll(ad::slice(out, 0, B, C), yc, sigma_phy);
      phys = phys ? *phys + p : p;
    }
  }
  const double inv_mc = 1.0 / static_cast<double>(mc_samples);
  ElboTerms t;
  t.data = ad::scale(*data, inv_mc);
  t.physics = phys ? ad::scale(*phys, inv_mc) : tape.constant(Array::scalar(0.0));
  t.kl = model.samples_weights() ? bnn::kl_to_prior(vars.net, model.net.spec.prior) : tape.constant(Array::scalar(0.0));
  t.total = ad::scale(t.data, 1.0 / static_cast<double>(B)) +
            ad::scale(t.kl, kl_weight / static_cast<double>(dataset_size));
  if (C > 0) t.total = t.total + ad::scale(t.physics, 1.0 / static_cast<double>(C));
  return t;
}

// ---- collocation --------------------------------------------------------

InputBox InputBox::of(const Array& rows, double inflate) {
  if (rows.rank() != 2 || rows.dim(0) == 0) throw Error(ErrorCode::ShapeMismatch, "input box needs non-empty rows");
  const std::size_t w = rows.dim(1);
  InputBox box{std::vector<double>(w, INFINITY), std::vector<double>(w, -INFINITY)};
  for (std::size_t i = 0; i < rows.dim(0); ++i) {
    for (std::size_t k = 0; k < w; ++k) {
      box.lo[k] = std::min(box.lo[k], rows[i * w + k]);
      box.hi[k] = std::max(box.hi[k], rows[i * w + k]);
    }
  }
  for (std::size_t k = 0; k < w; ++k) {
    const double pad = inflate * (box.hi[k] - box.lo[k]);
    box.lo[k] -= pad;
    box.hi[k] += pad;
  }
  return box;
}

std::size_t CollocationSet::valid_count() const { return static_cast<std::size_t>(std::count(valid.begin(), valid.end(), true)); }

namespace {

double radical_inverse(std::size_t index, unsigned base) {
  double inv = 1.0 / base, f = inv, r = 0.0;
  while (index > 0) {
    r += f * static_cast<double>(index % base);
    index /= base;
    f *= inv;
  }
  return r;
}

constexpr std::array<unsigned, 12> kPrimes{2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37};

}  // namespace

CollocationSet build_collocation(const InputBox& box, std::size_t count, CollocationStrategy strategy,
                                 const PhysicsFn& physics, std::uint64_t seed) {
  const std::size_t w = box.lo.size();
  if (w != kInputWidth || box.hi.size() != w) throw Error(ErrorCode::ShapeMismatch, "collocation box must be 12-wide");
  CollocationSet set;
  set.inputs = Array({count, w});
  if (count == 0) return set;
  Rng rng(seed);
  // Halton points get a random shift per axis (Cranley-Patterson rotation).
  std::vector<double> shift(w);
  for (auto& s : shift) s = rng.uniform();
  for (std::size_t i = 0; i < count; ++i) {
    for (std::size_t k = 0; k < w; ++k) {
      double u = 0.0;
      if (strategy == CollocationStrategy::Halton) {
        u = radical_inverse(i + 1, kPrimes[k]) + shift[k];
        u -= std::floor(u);
      } else {
        u = rng.uniform();
      }
      set.inputs[i * w + k] = box.lo[k] + u * (box.hi[k] - box.lo[k]);
    }
  }
  std::size_t failed = 0;
  for (std::size_t i = 0; i < count; ++i) {
    double target = NAN;
    try {
      target = physics(frame_from_row(&set.inputs[i * w]));
    } catch (const Error&) {
    }
    const bool ok = std::isfinite(target);
    set.targets.push_back(ok ? target : NAN);
    set.valid.push_back(ok);
    failed += !ok;
  }
  set.failure_ratio = static_cast<double>(failed) / static_cast<double>(count);
  if (set.failure_ratio > 0.5) {
    throw Error(ErrorCode::PhysicsUnavailable, format_double(100.0 * set.failure_ratio) +
                                                   "% of collocation points failed the physics solve");
  }
  return set;
}

dynamics::CornerModel corner_hardware(const sim::Dataset& dataset, sim::Corner corner) {
  if (dataset.vehicles.empty()) throw Error(ErrorCode::SchemaMismatch, "dataset names no vehicle");
  auto hardware = [](const sim::VehicleParams& v) {
    ConfigFile cfg;
    v.corner.to_config(cfg);
    cfg.set("body.static_load_guess", "0");
    return cfg.hash() + v.to_config().get_string("slip.kappa_per_ax") + v.to_config().get_string("slip.alpha_per_ay");
  };
  const auto* first = &dataset.vehicles.front();
  for (const auto& v : dataset.vehicles) {
    if (v.name < first->name) first = &v;
  }
  for (const auto& v : dataset.vehicles) {
    if (hardware(v) != hardware(*first)) {
      throw Error(ErrorCode::InvalidConfig, "vehicles '" + first->name + "' and '" + v.name +
                                                "' carry different corner hardware or slip closures");
    }
  }
  return first->corner_model(corner);
}

PhysicsFn make_physics(const sim::Dataset& dataset, sim::Corner corner, AblationMode mode, const BasicVehicle& basic) {
  if (mode == AblationMode::BasicModel) {
    return [basic, corner](const SensorFrame& f) { return basic_model_load(basic, corner, f.a_u); };
  }
  const dynamics::CornerModel model = corner_hardware(dataset, corner);
  const sim::SlipClosure slip = dataset.vehicles.front().slip;
  return [model, slip](const SensorFrame& f) {
    SensorFrame g = f;
    std::tie(g.slip_kappa, g.slip_alpha) = slip.slips(g.a_u);
    return dynamics::physics_estimate(model, g);
  };
}

Split split_segments(const sim::Dataset& dataset, double train_fraction, std::uint64_t seed) {
  const std::size_t n = dataset.segments.size();
  if (n < 2) throw Error(ErrorCode::InvalidConfig, "need at least two segments to split");
  std::map<sim::Style, std::vector<std::size_t>> by_style;
  for (std::size_t i = 0; i < n; ++i) by_style[dataset.segments[i].meta.style].push_back(i);
  const auto target = static_cast<std::size_t>(std::llround((1.0 - train_fraction) * static_cast<double>(n)));
  std::map<sim::Style, std::size_t> quota;
  std::size_t assigned = 0;
  for (auto& [style, ids] : by_style) {
    quota[style] = static_cast<std::size_t>(std::floor((1.0 - train_fraction) * static_cast<double>(ids.size())));
    assigned += quota[style];
  }
  for (auto& [style, ids] : by_style) {
    if (assigned < target && quota[style] + 1 < ids.size()) {
      ++quota[style];
      ++assigned;
    }
  }
  Rng rng(derive_seed(seed, 0x5917));
  Split split;
  for (auto& [style, ids] : by_style) {
    std::sort(ids.begin(), ids.end(), [&](auto a, auto b) { return dataset.segments[a].meta.id < dataset.segments[b].meta.id; });
    for (std::size_t i = ids.size(); i > 1; --i) std::swap(ids[i - 1], ids[rng.index(i)]);
    std::size_t q = std::max<std::size_t>(quota[style], ids.size() > 1 ? 1 : 0);
    for (std::size_t i = 0; i < ids.size(); ++i) (i < q ? split.held_out : split.train).push_back(ids[i]);
  }
  std::sort(split.train.begin(), split.train.end());
  std::sort(split.held_out.begin(), split.held_out.end());
  if (split.train.empty()) throw Error(ErrorCode::InvalidConfig, "split left no training segments");
  return split;
}

std::optional<double> noise_floor(const sim::Dataset& dataset, const std::vector<std::size_t>& segments,
                                  sim::Corner corner, std::size_t stride) {
  const auto ci = static_cast<std::size_t>(corner);
  double sq = 0.0;
  std::size_t n = 0;
  for (auto s : segments) {
    const auto& seg = dataset.segments.at(s);
    if (!seg.clean) return std::nullopt;
    const auto model = dataset.vehicle(seg.meta.vehicle).corner_model(corner);
    for (std::size_t i = 0; i < seg.samples(); i += std::max<std::size_t>(stride, 1)) {
      try {
        const double d = dynamics::physics_estimate(model, seg.corners[ci][i]) -
                         dynamics::physics_estimate(model, (*seg.clean)[ci][i]);
        sq += d * d;
        ++n;
      } catch (const Error&) {
      }
    }
  }
  if (n == 0) return std::nullopt;
  return std::sqrt(sq / static_cast<double>(n));
}

LossWeights resolve_loss_weights(const sim::Dataset& dataset, const std::vector<std::size_t>& train_segments,
                                 const TrainConfig& config) {
  double sigma = config.sigma_data;
  if (!(sigma > 0.0)) {
    std::size_t frames = 0;
    for (auto s : train_segments) frames += dataset.segments.at(s).samples();
    const auto floor = noise_floor(dataset, train_segments, config.corner, std::max<std::size_t>(1, frames / 2000));
    if (floor && *floor > 0.0) {
      sigma = *floor;
    } else {
      std::vector<double> y;
      for (auto s : train_segments) {
        const auto l = labels(dataset.segments.at(s).corners[static_cast<std::size_t>(config.corner)]);
        y.insert(y.end(), l.begin(), l.end());
      }
      double mean = 0.0, var = 0.0;
      for (double v : y) mean += v;
      mean /= static_cast<double>(y.size());
      for (double v : y) var += (v - mean) * (v - mean);
      sigma = config.label_fraction * std::sqrt(var / static_cast<double>(y.size()));
    }
  }
  LossWeights w{sigma, config.sigma_phy_ratio * sigma};
  w.validate();
  return w;
}

// ---- training -----------------------------------------------------------

namespace {

struct Stacked {
  Array rows;
  std::vector<double> y;
};

Stacked stack(const sim::Dataset& ds, const std::vector<std::size_t>& segments, sim::Corner corner) {
  const auto ci = static_cast<std::size_t>(corner);
  std::vector<double> flat;
  Stacked out;
  for (auto s : segments) {
    const auto& series = ds.segments.at(s).corners[ci];
    const Array r = feature_rows(series);
    flat.insert(flat.end(), r.values().begin(), r.values().end());
    const auto l = labels(series);
    out.y.insert(out.y.end(), l.begin(), l.end());
  }
  const std::size_t n = out.y.size();
  out.rows = Array({n, kInputWidth}, std::move(flat));
  return out;
}

Array gather_rows(const Array& rows, const std::vector<std::size_t>& idx, std::size_t begin, std::size_t count) {
  const std::size_t w = rows.dim(1);
  Array out({count, w});
  for (std::size_t i = 0; i < count; ++i) {
    std::copy_n(rows.data() + idx[begin + i] * w, w, out.data() + i * w);
  }
  return out;
}

double rmse_of(const std::vector<double>& p, const std::vector<double>& t) {
  double sq = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) sq += (p[i] - t[i]) * (p[i] - t[i]);
  return std::sqrt(sq / static_cast<double>(p.size()));
}

std::vector<double> predict_mean_chunked(const Model& model, const Array& rows) {
  std::vector<double> out;
  const std::size_t n = rows.dim(0), chunk = 4096;
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  for (std::size_t b = 0; b < n; b += chunk) {
    const auto part = predict_mean(model, gather_rows(rows, idx, b, std::min(chunk, n - b)));
    out.insert(out.end(), part.begin(), part.end());
  }
  return out;
}

struct Adam {
  std::vector<Array> m, v;
  std::size_t t = 0;
  static constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;

  explicit Adam(const std::vector<Array*>& params) {
    for (auto* p : params) {
      m.emplace_back(p->shape());
      v.emplace_back(p->shape());
    }
  }

  void step(const std::vector<Array*>& params, const std::vector<Array>& grads, double lr) {
    ++t;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(t));
    for (std::size_t k = 0; k < params.size(); ++k) {
      Array& p = *params[k];
      const Array& g = grads[k];
      for (std::size_t i = 0; i < p.size(); ++i) {
        m[k][i] = b1 * m[k][i] + (1.0 - b1) * g[i];
        v[k][i] = b2 * v[k][i] + (1.0 - b2) * g[i] * g[i];
        p[i] -= lr * (m[k][i] / c1) / (std::sqrt(v[k][i] / c2) + eps);
      }
    }
  }
};

}  // namespace

TrainResult train(const sim::Dataset& dataset, const TrainConfig& config) {
  config.validate();
  if (dataset.segments.empty()) throw Error(ErrorCode::InvalidConfig, "training dataset is empty");
  TrainResult result;
  TrainReport& report = result.report;
  report.dataset_hash = dataset.hash();
  report.config_hash = config.hash();
  report.split = split_segments(dataset, config.train_fraction, config.split_seed);

  const Stacked tr = stack(dataset, report.split.train, config.corner);
  const Stacked va = stack(dataset, report.split.held_out, config.corner);

  Rng init_rng(derive_seed(config.seed, 1));
  Model& model = result.model;
  model = Model::init(config, init_rng);
  model.scaler = Standardizer::fit(tr.rows, tr.y);
  model.weights = resolve_loss_weights(dataset, report.split.train, config);
  report.weights = model.weights;

  const Array x_train = model.scaler.apply(tr.rows);
  Array y_train({tr.y.size(), 1});
  for (std::size_t i = 0; i < tr.y.size(); ++i) y_train[i] = (tr.y[i] - model.scaler.y_mean) / model.scaler.y_scale;

  // Collocation rows and targets, standardized.
  Array xc_all({0, kInputWidth});
  std::vector<double> yc_all;
  if (config.physics) {
    const auto physics = make_physics(dataset, config.corner, config.ablation, config.basic);
    const auto set = build_collocation(InputBox::of(tr.rows), config.collocation_count, config.strategy, physics,
                                       derive_seed(config.seed, 3));
    report.collocation_failure_ratio = set.failure_ratio;
    if (set.valid_count() == 0) throw Error(ErrorCode::EmptyCollocationSet, "every collocation point failed");
    std::vector<std::size_t> ok;
    for (std::size_t i = 0; i < set.valid.size(); ++i) {
      if (set.valid[i]) ok.push_back(i);
    }
    xc_all = model.scaler.apply(gather_rows(set.inputs, ok, 0, ok.size()));
    for (auto i : ok) yc_all.push_back((set.targets[i] - model.scaler.y_mean) / model.scaler.y_scale);
  }
  const double sd = model.weights.sigma_data / model.scaler.y_scale;
  const double sp = model.weights.sigma_phy / model.scaler.y_scale;

  Rng rng(derive_seed(config.seed, 2));
  std::vector<Array*> params = model.trainable();
  Adam adam(params);
  const std::size_t n = tr.y.size();
  const std::size_t steps_per_epoch = (n + config.batch_size - 1) / config.batch_size;
  const double total_steps = static_cast<double>(config.epochs * steps_per_epoch);
  std::size_t step = 0;
  std::vector<std::size_t> perm(n);
  for (std::size_t i = 0; i < n; ++i) perm[i] = i;

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    for (std::size_t i = n; i > 1; --i) std::swap(perm[i - 1], perm[rng.index(i)]);
    double data_sum = 0.0, phys_sum = 0.0;
    std::size_t data_count = 0, phys_count = 0;
    for (std::size_t b = 0; b < steps_per_epoch; ++b) {
      const std::size_t begin = b * config.batch_size;
      const std::size_t count = std::min(config.batch_size, n - begin);
      ElboBatch batch{gather_rows(x_train, perm, begin, count), gather_rows(y_train, perm, begin, count),
                      Array({0, kInputWidth}), Array({0, 1})};
      if (!yc_all.empty()) {
        std::vector<std::size_t> pick(config.collocation_batch);
        for (auto& p : pick) p = rng.index(yc_all.size());
        batch.xc = gather_rows(xc_all, pick, 0, pick.size());
        batch.yc = Array({pick.size(), 1});
        for (std::size_t i = 0; i < pick.size(); ++i) batch.yc[i] = yc_all[pick[i]];
      }
      Tape tape;
      const ModelVars vars = attach(tape, model, true);
      const ElboTerms terms = elbo_loss(model, vars, batch, sd, sp, n, config.kl_weight, config.mc_samples, rng);
      const double loss = terms.total.value().item();
      if (!std::isfinite(loss)) {
        throw Error(ErrorCode::NanLoss, "epoch " + std::to_string(epoch) + ", batch " + std::to_string(b) +
                                            ": loss is " + format_double(loss));
      }
      const auto grads = ad::backward(tape, terms.total);
      std::vector<Array> g;
      for (const auto& v : trainable_vars(model, vars)) g.push_back(grads.wrt(v));
      const double progress = total_steps > 0 ? static_cast<double>(step) / total_steps : 0.0;
      const double lr_min = config.learning_rate * config.lr_final_ratio;
      const double lr = lr_min + 0.5 * (config.learning_rate - lr_min) * (1.0 + std::cos(std::numbers::pi * progress));
      adam.step(params, g, lr);
      ++step;
      data_sum += terms.data.value().item();
      data_count += count;
      if (!yc_all.empty()) {
        phys_sum += terms.physics.value().item();
        phys_count += batch.yc.size();
      }
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.data_nll = data_sum / static_cast<double>(data_count);
    rec.physics_nll = phys_count > 0 ? phys_sum / static_cast<double>(phys_count) : 0.0;
    rec.kl = model.samples_weights() ? model.net.kl() : 0.0;
    rec.val_rmse = va.y.empty() ? 0.0 : rmse_of(predict_mean_chunked(model, va.rows), va.y);
    report.epochs.push_back(rec);
  }
  return result;
}

void write_report_csv(const TrainReport& report, const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  f << "epoch,data_nll,physics_nll,kl,val_rmse\n";
  for (const auto& e : report.epochs) {
    f << e.epoch << "," << format_double(e.data_nll) << "," << format_double(e.physics_nll) << ","
      << format_double(e.kl) << "," << format_double(e.val_rmse) << "\n";
  }
  if (!f) throw Error(ErrorCode::IoError, "write failed for " + path.string());
}

}  // namespace wheelload::pinn
