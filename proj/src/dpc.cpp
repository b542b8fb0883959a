#include "wheelload/dpc.hpp"

#include <cmath>

#include "wheelload/error.hpp"

namespace wheelload::dpc {

namespace {

Var run_mlp(const std::vector<DenseVars>& layers, Var x) {
  for (std::size_t i = 0; i < layers.size(); ++i) {
    x = affine(x, layers[i]);
    if (i + 1 < layers.size()) x = ad::tanh(x);
  }
  return x;
}

std::vector<DenseLayer> make_mlp(std::size_t in, const std::vector<std::size_t>& hidden, std::size_t out, Rng& rng) {
  std::vector<DenseLayer> layers;
  std::size_t width = in;
  for (auto h : hidden) {
    layers.push_back(DenseLayer::init(width, h, rng));
    width = h;
  }
  layers.push_back(DenseLayer::init(width, out, rng));
  return layers;
}

}  // namespace

DenseLayer DenseLayer::init(std::size_t in, std::size_t out, Rng& rng, bool zero) {
  DenseLayer layer{Array({out, in}), Array({out})};
  if (!zero) layer.weight = rng.normal_array({out, in}, 1.0 / std::sqrt(static_cast<double>(in)));
  return layer;
}

DenseVars attach(Tape& tape, const DenseLayer& layer, bool trainable) {
  if (trainable) return {tape.variable(layer.weight), tape.variable(layer.bias)};
  return {tape.constant(layer.weight), tape.constant(layer.bias)};
}

Var affine(Var x, const DenseVars& layer) {
  return ad::matmul(x, ad::transpose(layer.weight)) + layer.bias;
}

void EncoderSpec::validate() const {
  if (state_width == 0 || d_width == 0) throw Error(ErrorCode::InvalidConfig, "encoder widths must be positive");
  if (film_widths.empty()) throw Error(ErrorCode::InvalidConfig, "encoder needs at least one FiLM site");
  for (auto w : film_widths) {
    if (w == 0) throw Error(ErrorCode::InvalidConfig, "FiLM width must be positive");
  }
  for (auto w : d_hidden) {
    if (w == 0) throw Error(ErrorCode::InvalidConfig, "MLP_D hidden width must be positive");
  }
  for (auto w : g_hidden) {
    if (w == 0) throw Error(ErrorCode::InvalidConfig, "MLP_g hidden width must be positive");
  }
}

std::size_t EncoderSpec::film_total() const {
  std::size_t n = 0;
  for (auto w : film_widths) n += w;
  return n;
}

DPCEncoder DPCEncoder::init(const EncoderSpec& spec, Rng& rng) {
  spec.validate();
  DPCEncoder enc;
  enc.spec = spec;
  enc.mlp_d = make_mlp(2 * spec.state_width, spec.d_hidden, spec.d_width, rng);
  enc.mlp_g = make_mlp(spec.state_width, spec.g_hidden, spec.d_width, rng);
  enc.output = DenseLayer::init(spec.d_width, 2 * spec.film_total(), rng, true);
  return enc;
}

std::vector<Array*> DPCEncoder::parameters() {
  std::vector<Array*> out;
  for (auto* group : {&mlp_d, &mlp_g}) {
    for (auto& l : *group) {
      out.push_back(&l.weight);
      out.push_back(&l.bias);
    }
  }
  out.push_back(&output.weight);
  out.push_back(&output.bias);
  return out;
}

std::vector<const Array*> DPCEncoder::parameters() const {
  auto mutable_params = const_cast<DPCEncoder*>(this)->parameters();
  return {mutable_params.begin(), mutable_params.end()};
}

EncoderVars attach(Tape& tape, const DPCEncoder& encoder, bool trainable) {
  EncoderVars vars;
  for (const auto& l : encoder.mlp_d) vars.mlp_d.push_back(attach(tape, l, trainable));
  for (const auto& l : encoder.mlp_g) vars.mlp_g.push_back(attach(tape, l, trainable));
  vars.output = attach(tape, encoder.output, trainable);
  return vars;
}

Array delta_state(const Array& x_t, const Array& x_prev) {
  if (x_t.shape() != x_prev.shape()) {
    throw Error(ErrorCode::ShapeMismatch, "delta_state: " + ad::to_string(x_t.shape()) + " vs " +
                                              ad::to_string(x_prev.shape()));
  }
  Array d(x_t.shape());
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = x_t[i] - x_prev[i];
  return d;
}

Var delta_state(Var x_t, Var x_prev) {
  if (x_t.shape() != x_prev.shape()) {
    throw Error(ErrorCode::ShapeMismatch, "delta_state: " + ad::to_string(x_t.shape()) + " vs " +
                                              ad::to_string(x_prev.shape()));
  }
  return x_t - x_prev;
}

Var damping_representation(const EncoderVars& enc, Var delta, Var x_t) {
  return run_mlp(enc.mlp_d, ad::concat({delta, x_t}, 1));
}

Var gate(const EncoderVars& enc, Var x_t) { return ad::sigmoid(run_mlp(enc.mlp_g, x_t)); }

FiLMParams film_params(const EncoderVars& enc, const EncoderSpec& spec, Var g, Var d) {
  if (g.shape() != d.shape()) {
    throw Error(ErrorCode::ShapeMismatch, "gate " + ad::to_string(g.shape()) + " vs damping representation " +
                                              ad::to_string(d.shape()));
  }
  Var raw = affine(g * d, enc.output);
  const std::size_t total = spec.film_total();
  if (raw.shape().back() != 2 * total) {
    throw Error(ErrorCode::ShapeMismatch, "encoder output width " + std::to_string(raw.shape().back()) +
                                              " for " + std::to_string(total) + " modulated activations");
  }
  FiLMParams film;
  std::size_t off = 0;
  for (auto w : spec.film_widths) {
    film.gamma.push_back(ad::add_scalar(ad::slice(raw, 1, off, w), 1.0));
    film.beta.push_back(ad::slice(raw, 1, total + off, w));
    off += w;
  }
  return film;
}

FiLMParams encode(const EncoderVars& enc, const EncoderSpec& spec, Var x_t, Var delta) {
  return film_params(enc, spec, gate(enc, x_t), damping_representation(enc, delta, x_t));
}

Var modulate(Var f, Var gamma, Var beta) {
  if (gamma.shape().back() != f.shape().back() || beta.shape().back() != f.shape().back()) {
    throw Error(ErrorCode::ShapeMismatch, "modulate: activation " + ad::to_string(f.shape()) + ", gamma " +
                                              ad::to_string(gamma.shape()) + ", beta " + ad::to_string(beta.shape()));
  }
  return gamma * f + beta;
}

}  // namespace wheelload::dpc
