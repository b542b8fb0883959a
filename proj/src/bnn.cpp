#include "wheelload/bnn.hpp"

#include <cmath>

#include "wheelload/error.hpp"

namespace wheelload::bnn {

void PriorSpec::validate() const {
  if (!(tau > 0.0)) throw Error(ErrorCode::InvalidConfig, "prior tau must be positive");
}

void NSDropoutSite::validate() const {
  if (!(sigma > 0.0)) throw Error(ErrorCode::InvalidConfig, "NS-Dropout sigma must be positive");
}

void NetworkSpec::validate() const {
  if (input_width == 0 || output_width == 0) throw Error(ErrorCode::InvalidConfig, "network widths must be positive");
  if (hidden.empty()) throw Error(ErrorCode::InvalidConfig, "network needs at least one hidden layer");
  for (auto h : hidden) {
    if (h == 0) throw Error(ErrorCode::InvalidConfig, "hidden widths must be positive");
  }
  if (!(init_sigma_ratio > 0.0)) throw Error(ErrorCode::InvalidConfig, "init sigma ratio must be positive");
  prior.validate();
  dropout.validate();
}

double rho_for_sigma(double sigma) {
  // inverse softplus; expm1 keeps small sigma accurate
  return sigma > 30.0 ? sigma : std::log(std::expm1(sigma));
}

Array VariationalLinearLayer::weight_sigma() const {
  Array s(weight_rho.shape());
  for (std::size_t i = 0; i < s.size(); ++i) s[i] = ad::softplus(weight_rho[i]);
  return s;
}

Array VariationalLinearLayer::bias_sigma() const {
  Array s(bias_rho.shape());
  for (std::size_t i = 0; i < s.size(); ++i) s[i] = ad::softplus(bias_rho[i]);
  return s;
}

void VariationalLinearLayer::validate() const {
  if (weight_mu.rank() != 2 || weight_rho.shape() != weight_mu.shape() || bias_mu.shape() != Shape{out()} ||
      bias_rho.shape() != bias_mu.shape()) {
    throw Error(ErrorCode::ShapeMismatch, "variational layer: weight " + ad::to_string(weight_mu.shape()) + ", rho " +
                                              ad::to_string(weight_rho.shape()) + ", bias " +
                                              ad::to_string(bias_mu.shape()));
  }
}

VariationalLinearLayer VariationalLinearLayer::init(std::size_t in, std::size_t out, double sigma, Rng& rng) {
  const double rho = rho_for_sigma(sigma);
  return {rng.normal_array({out, in}, 1.0 / std::sqrt(static_cast<double>(in))), Array({out, in}, rho), Array({out}),
          Array({out}, rho)};
}

LayerVars attach(Tape& tape, const VariationalLinearLayer& layer, bool trainable) {
  auto put = [&](const Array& a) { return trainable ? tape.variable(a) : tape.constant(a); };
  return {put(layer.weight_mu), put(layer.weight_rho), put(layer.bias_mu), put(layer.bias_rho)};
}

WeightSample sample_weights(const LayerVars& layer, Rng& rng) {
  Tape& tape = *layer.weight_mu.tape();
  Var eps_w = tape.constant(rng.normal_array(layer.weight_mu.shape()));
  Var eps_b = tape.constant(rng.normal_array(layer.bias_mu.shape()));
  return {layer.weight_mu + ad::softplus(layer.weight_rho) * eps_w, layer.bias_mu + ad::softplus(layer.bias_rho) * eps_b};
}

WeightSample mean_weights(const LayerVars& layer) { return {layer.weight_mu, layer.bias_mu}; }

std::pair<Array, Array> sample_weights(const VariationalLinearLayer& layer, Rng& rng) {
  Array w = layer.weight_mu;
  Array b = layer.bias_mu;
  for (std::size_t i = 0; i < w.size(); ++i) w[i] += ad::softplus(layer.weight_rho[i]) * rng.normal();
  for (std::size_t i = 0; i < b.size(); ++i) b[i] += ad::softplus(layer.bias_rho[i]) * rng.normal();
  return {std::move(w), std::move(b)};
}

double kl_to_prior(const VariationalLinearLayer& layer, const PriorSpec& prior) {
  const double tau = prior.tau;
  double kl = 0.0;
  auto accumulate = [&](const Array& mu, const Array& rho) {
    for (std::size_t i = 0; i < mu.size(); ++i) {
      const double s = ad::softplus(rho[i]);
      kl += std::log(tau / s) + (s * s + mu[i] * mu[i]) / (2.0 * tau * tau) - 0.5;
    }
  };
  accumulate(layer.weight_mu, layer.weight_rho);
  accumulate(layer.bias_mu, layer.bias_rho);
  return kl;
}

Var kl_to_prior(const LayerVars& layer, const PriorSpec& prior) {
  const double tau = prior.tau;
  auto term = [&](Var mu, Var rho) {
    Var s = ad::softplus(rho);
    Var quad = ad::scale(ad::sum(ad::square(s) + ad::square(mu)), 1.0 / (2.0 * tau * tau));
    const double n = static_cast<double>(mu.value().size());
    // sum log(tau / s) - n/2 = n (log tau - 1/2) - sum log s
    return ad::add_scalar(quad - ad::sum(ad::log(s)), n * (std::log(tau) - 0.5));
  };
  return term(layer.weight_mu, layer.weight_rho) + term(layer.bias_mu, layer.bias_rho);
}

Array ns_dropout_mask(const Shape& shape, double sigma, Rng& rng) {
  if (!(sigma > 0.0)) throw Error(ErrorCode::InvalidConfig, "NS-Dropout sigma must be positive");
  Array mask(shape);
  for (auto& m : mask.values()) m = 0.5 * ad::sigmoid(sigma * rng.normal()) + 0.5;
  return mask;
}

Array apply_ns_dropout(const Array& x, const NSDropoutSite& site, Rng& rng) {
  Array out = ns_dropout_mask(x.shape(), site.sigma, rng);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= x[i];
  return out;
}

Var apply_ns_dropout(Var x, const NSDropoutSite& site, Rng& rng) {
  return x * x.tape()->constant(ns_dropout_mask(x.shape(), site.sigma, rng));
}

BayesianNetwork BayesianNetwork::init(const NetworkSpec& spec, Rng& rng) {
  spec.validate();
  BayesianNetwork net;
  net.spec = spec;
  const double sigma = spec.init_sigma_ratio * spec.prior.tau;
  std::size_t width = spec.input_width;
  for (auto h : spec.hidden) {
    net.layers.push_back(VariationalLinearLayer::init(width, h, sigma, rng));
    width = h;
  }
  net.layers.push_back(VariationalLinearLayer::init(width, spec.output_width, sigma, rng));
  return net;
}

double BayesianNetwork::kl() const {
  double total = 0.0;
  for (const auto& l : layers) total += kl_to_prior(l, spec.prior);
  return total;
}

std::vector<Array*> BayesianNetwork::parameters() {
  std::vector<Array*> out;
  for (auto& l : layers) {
    out.push_back(&l.weight_mu);
    out.push_back(&l.weight_rho);
    out.push_back(&l.bias_mu);
    out.push_back(&l.bias_rho);
  }
  return out;
}

std::vector<const Array*> BayesianNetwork::parameters() const {
  auto p = const_cast<BayesianNetwork*>(this)->parameters();
  return {p.begin(), p.end()};
}

NetworkVars attach(Tape& tape, const BayesianNetwork& net, bool trainable) {
  NetworkVars vars;
  for (const auto& l : net.layers) vars.layers.push_back(attach(tape, l, trainable));
  return vars;
}

Var kl_to_prior(const NetworkVars& vars, const PriorSpec& prior) {
  Var total = kl_to_prior(vars.layers.front(), prior);
  for (std::size_t i = 1; i < vars.layers.size(); ++i) total = total + kl_to_prior(vars.layers[i], prior);
  return total;
}

Var forward(const NetworkSpec& spec, const NetworkVars& vars, const dpc::FiLMParams* film, Var x, Rng& rng,
            const ForwardOptions& options) {
  const std::size_t hidden = spec.hidden.size();
  if (vars.layers.size() != hidden + 1) {
    throw Error(ErrorCode::ShapeMismatch, "network has " + std::to_string(vars.layers.size()) + " layers, spec wants " +
                                              std::to_string(hidden + 1));
  }
  if (x.shape().size() != 2 || x.shape()[1] != spec.input_width) {
    throw Error(ErrorCode::ShapeMismatch, "network input " + ad::to_string(x.shape()) + ", expected [B, " +
                                              std::to_string(spec.input_width) + "]");
  }
  if (film && (film->gamma.size() != hidden || film->beta.size() != hidden)) {
    throw Error(ErrorCode::ShapeMismatch, "FiLM has " + std::to_string(film->gamma.size()) + " sites for " +
                                              std::to_string(hidden) + " hidden layers");
  }
  const bool sampled = options.mode == Mode::Sampled;
  Var h = x;
  for (std::size_t i = 0; i <= hidden; ++i) {
    const WeightSample w = sampled && options.sample_weights ? sample_weights(vars.layers[i], rng)
                                                             : mean_weights(vars.layers[i]);
    h = ad::matmul(h, ad::transpose(w.weight)) + w.bias;
    if (i == hidden) break;
    h = ad::tanh(h);
    if (film) h = dpc::modulate(h, film->gamma[i], film->beta[i]);
    if (!options.dropout) continue;
    if (sampled && options.fresh_masks) {
      h = apply_ns_dropout(h, spec.dropout, rng);
    } else {
      h = ad::scale(h, kMeanMask);
    }
  }
  return h;
}

Posterior predictive_posterior(const BayesianNetwork& net, const FiLMArrays* film, const Array& x, std::size_t n,
                               Rng& rng, ForwardOptions options) {
  if (n < 2) throw Error(ErrorCode::InsufficientSamples, "predictive posterior needs at least 2 samples, got " + std::to_string(n));
  options.mode = Mode::Sampled;
  options.fresh_masks = net.spec.dropout.active_in_inference;

  const std::size_t batch = x.dim(0);
  const std::size_t out_w = net.spec.output_width;
  // Welford: identical draws give exactly zero spread
  Posterior post{Array({batch, out_w}), Array({batch, out_w})};
  Array m2({batch, out_w});
  for (std::size_t s = 0; s < n; ++s) {
    Tape tape;
    NetworkVars vars = attach(tape, net, false);
    dpc::FiLMParams film_vars;
    if (film) {
      for (const auto& g : film->gamma) film_vars.gamma.push_back(tape.constant(g));
      for (const auto& b : film->beta) film_vars.beta.push_back(tape.constant(b));
    }
    const Array& y = forward(net.spec, vars, film ? &film_vars : nullptr, tape.constant(x), rng, options).value();
    const double k = static_cast<double>(s + 1);
    for (std::size_t i = 0; i < y.size(); ++i) {
      const double delta = y[i] - post.mean[i];
      post.mean[i] += delta / k;
      m2[i] += delta * (y[i] - post.mean[i]);
    }
  }
  for (std::size_t i = 0; i < m2.size(); ++i) post.std[i] = std::sqrt(m2[i] / static_cast<double>(n - 1));
  return post;
}

}  // namespace wheelload::bnn
