#pragma once

// Damper-characteristic conditioning: a deterministic encoder that turns the
// current state x_t and its one-step difference into FiLM (gamma, beta) pairs
// for every hidden layer of the main network.
//
//   D_t   = MLP_D([dx_t, x_t])
//   g_t   = sigmoid(MLP_g(x_t))
//   raw   = A (g_t * D_t) + a          (A, a zero at init)
//   gamma = 1 + raw[gamma part], beta = raw[beta part]

#include <cstddef>
#include <vector>

#include "wheelload/autodiff.hpp"
#include "wheelload/random.hpp"

namespace wheelload::dpc {

using ad::Array;
using ad::Tape;
using ad::Var;

/// Deterministic affine layer, weight (out x in).
struct DenseLayer {
  Array weight;
  Array bias;

  std::size_t in() const { return weight.dim(1); }
  std::size_t out() const { return weight.dim(0); }
  /// weight ~ N(0, 1/in), bias 0; all zero when `zero`.
  static DenseLayer init(std::size_t in, std::size_t out, Rng& rng, bool zero = false);
};

struct DenseVars {
  Var weight;
  Var bias;
};

DenseVars attach(Tape& tape, const DenseLayer& layer, bool trainable = true);
/// x W^T + b for a batch x of shape [B, in].
Var affine(Var x, const DenseVars& layer);

struct EncoderSpec {
  std::size_t state_width = 6;
  std::vector<std::size_t> d_hidden{32, 32};
  std::size_t d_width = 32;
  std::vector<std::size_t> g_hidden{32, 32};
  /// Hidden widths of the modulated network.
  std::vector<std::size_t> film_widths{64, 64, 64, 64};

  void validate() const;
  std::size_t film_total() const;
};

struct DPCEncoder {
  EncoderSpec spec;
  std::vector<DenseLayer> mlp_d;  ///< tanh hidden layers, linear last
  std::vector<DenseLayer> mlp_g;  ///< tanh hidden layers, linear last (logits)
  DenseLayer output;              ///< d_width -> 2 * film_total

  static DPCEncoder init(const EncoderSpec& spec, Rng& rng);
  std::vector<const Array*> parameters() const;
  std::vector<Array*> parameters();
};

struct EncoderVars {
  std::vector<DenseVars> mlp_d;
  std::vector<DenseVars> mlp_g;
  DenseVars output;
};

EncoderVars attach(Tape& tape, const DPCEncoder& encoder, bool trainable = true);

/// Per modulated layer: gamma and beta, each [B, width].
struct FiLMParams {
  std::vector<Var> gamma;
  std::vector<Var> beta;
};

/// x_t - x_prev; ShapeMismatch on unequal shapes.
Array delta_state(const Array& x_t, const Array& x_prev);
Var delta_state(Var x_t, Var x_prev);

Var damping_representation(const EncoderVars& enc, Var delta, Var x_t);
Var gate(const EncoderVars& enc, Var x_t);
FiLMParams film_params(const EncoderVars& enc, const EncoderSpec& spec, Var g, Var d);
/// Full encoder pass.
FiLMParams encode(const EncoderVars& enc, const EncoderSpec& spec, Var x_t, Var delta);

/// gamma * F + beta, broadcast over the batch.
Var modulate(Var f, Var gamma, Var beta);

}  // namespace wheelload::dpc
