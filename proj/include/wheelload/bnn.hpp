#pragma once

// Mean-field Gaussian Bayesian MLP with NS-Dropout.
//
// Each weight has q(w) = N(mu, softplus(rho)^2) and prior N(0, tau^2). A
// hidden layer computes  affine -> tanh -> FiLM -> NS-Dropout; the output
// layer is affine only.

#include <cstddef>
#include <vector>

#include "wheelload/autodiff.hpp"
#include "wheelload/dpc.hpp"
#include "wheelload/random.hpp"

namespace wheelload::bnn {

using ad::Array;
using ad::Shape;
using ad::Tape;
using ad::Var;

struct PriorSpec {
  double tau = 1.0;
  void validate() const;
};

struct NSDropoutSite {
  double sigma = 1.0;
  bool active_in_inference = true;
  void validate() const;
};

struct NetworkSpec {
  std::size_t input_width = 12;
  std::vector<std::size_t> hidden{64, 64, 64, 64};
  std::size_t output_width = 1;
  PriorSpec prior;
  NSDropoutSite dropout;
  /// Initial sigma_w as a fraction of tau.
  double init_sigma_ratio = 0.05;

  void validate() const;
};

struct VariationalLinearLayer {
  Array weight_mu;   ///< [out, in]
  Array weight_rho;  ///< [out, in]
  Array bias_mu;     ///< [out]
  Array bias_rho;    ///< [out]

  std::size_t in() const { return weight_mu.dim(1); }
  std::size_t out() const { return weight_mu.dim(0); }
  Array weight_sigma() const;
  Array bias_sigma() const;
  void validate() const;

  /// mu ~ N(0, 1/in), bias mu 0, sigma_w = sigma everywhere.
  static VariationalLinearLayer init(std::size_t in, std::size_t out, double sigma, Rng& rng);
};

/// rho with softplus(rho) = sigma.
double rho_for_sigma(double sigma);

struct LayerVars {
  Var weight_mu, weight_rho, bias_mu, bias_rho;
};

LayerVars attach(Tape& tape, const VariationalLinearLayer& layer, bool trainable = true);

struct WeightSample {
  Var weight;
  Var bias;
};

/// w = mu + softplus(rho) * eps, eps ~ N(0, 1) entered as a tape constant.
WeightSample sample_weights(const LayerVars& layer, Rng& rng);
WeightSample mean_weights(const LayerVars& layer);
/// Concrete draw without a tape.
std::pair<Array, Array> sample_weights(const VariationalLinearLayer& layer, Rng& rng);

/// sum [log(tau/sigma) + (sigma^2 + mu^2)/(2 tau^2) - 1/2] over weights and biases.
double kl_to_prior(const VariationalLinearLayer& layer, const PriorSpec& prior);
Var kl_to_prior(const LayerVars& layer, const PriorSpec& prior);

/// 1/2 sigmoid(h) + 1/2 with h ~ N(0, sigma^2); every element in (1/2, 1).
Array ns_dropout_mask(const Shape& shape, double sigma, Rng& rng);
Array apply_ns_dropout(const Array& x, const NSDropoutSite& site, Rng& rng);
/// Fresh mask per call, frozen on the tape.
Var apply_ns_dropout(Var x, const NSDropoutSite& site, Rng& rng);

inline constexpr double kMeanMask = 0.75;

enum class Mode { Sampled, Mean };

struct ForwardOptions {
  Mode mode = Mode::Sampled;
  /// false: weights are their means even in sampled mode (point estimate).
  bool sample_weights = true;
  /// false: every mask is 1.
  bool dropout = true;
  /// false: sampled mode still uses the expected mask 3/4.
  bool fresh_masks = true;
};

struct BayesianNetwork {
  NetworkSpec spec;
  std::vector<VariationalLinearLayer> layers;  ///< hidden layers then output

  static BayesianNetwork init(const NetworkSpec& spec, Rng& rng);
  double kl() const;
  std::vector<Array*> parameters();
  std::vector<const Array*> parameters() const;
};

struct NetworkVars {
  std::vector<LayerVars> layers;
};

NetworkVars attach(Tape& tape, const BayesianNetwork& net, bool trainable = true);
Var kl_to_prior(const NetworkVars& vars, const PriorSpec& prior);

/// x: [B, input_width] -> [B, output_width]. film may be null (no conditioning).
Var forward(const NetworkSpec& spec, const NetworkVars& vars, const dpc::FiLMParams* film, Var x, Rng& rng,
            const ForwardOptions& options);

/// Constant per-site FiLM arrays, each [B, width].
struct FiLMArrays {
  std::vector<Array> gamma;
  std::vector<Array> beta;
};

struct Posterior {
  Array mean;  ///< [B, output_width]
  Array std;   ///< unbiased sample std
};

/// N sampled forwards (weights, and masks when the site is active in
/// inference); InsufficientSamples when n < 2.
Posterior predictive_posterior(const BayesianNetwork& net, const FiLMArrays* film, const Array& x, std::size_t n,
                               Rng& rng, ForwardOptions options = {});

}  // namespace wheelload::bnn
