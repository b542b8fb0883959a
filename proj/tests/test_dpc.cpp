#include <doctest.h>

#include <cmath>

#include "param_pack.hpp"
#include "wheelload/bnn.hpp"
#include "wheelload/dpc.hpp"
#include "wheelload/error.hpp"

using namespace wheelload;
using namespace wheelload::dpc;
using testing_support::ParamPack;

namespace {

EncoderSpec small_encoder() {
  EncoderSpec spec;
  spec.state_width = 3;
  spec.d_hidden = {4};
  spec.d_width = 5;
  spec.g_hidden = {4};
  spec.film_widths = {3, 2};
  return spec;
}

void randomise_output(DPCEncoder& enc, Rng& rng, double sd = 0.5) {
  enc.output.weight = rng.normal_array(enc.output.weight.shape(), sd);
  enc.output.bias = rng.normal_array(enc.output.bias.shape(), sd);
}

}  // namespace

TEST_CASE("delta_state") {
  const Array a({1, 2}, std::vector<double>{1.0, 2.0});
  const Array b({1, 2}, std::vector<double>{0.5, 3.0});
  const Array d = delta_state(a, b);
  CHECK(d[0] == 0.5);
  CHECK(d[1] == -1.0);
  CHECK(delta_state(a, a).values() == std::vector<double>{0.0, 0.0});
  CHECK_THROWS_AS(delta_state(a, Array({1, 3})), Error);
  Tape tape;
  CHECK_THROWS_AS(delta_state(tape.constant(a), tape.constant(Array({2, 2}))), Error);
}

TEST_CASE("damping representation") {
  Rng rng(1);
  const auto spec = small_encoder();
  auto enc = DPCEncoder::init(spec, rng);
  const Array x = rng.normal_array({7, 3});
  const Array dx = rng.normal_array({7, 3}, 0.1);
  auto run = [&](const DPCEncoder& e) {
    Tape tape;
    return damping_representation(attach(tape, e), tape.constant(dx), tape.constant(x)).value();
  };
  CHECK(run(enc).shape() == ad::Shape{7, 5});
  CHECK(run(enc).identical(run(enc)));
  auto zeroed = enc;
  zeroed.mlp_d.back() = DenseLayer::init(4, 5, rng, true);
  const Array d0 = run(zeroed);
  for (double v : d0.values()) CHECK(v == 0.0);
}

TEST_CASE("gate range and dependence") {
  Rng rng(2);
  auto enc = DPCEncoder::init(EncoderSpec{}, rng);
  {
    Tape tape;
    const Array x = rng.normal_array({100000, 6}, 2.0);
    const Array g = gate(attach(tape, enc), tape.constant(x)).value();
    std::size_t outside = 0;
    for (double v : g.values()) outside += (v > 0.0 && v < 1.0) ? 0 : 1;
    CHECK(outside == 0);
  }
  auto zero_logits = enc;
  zero_logits.mlp_g.back() = DenseLayer::init(32, 32, rng, true);
  Tape tape;
  const Array g0 = gate(attach(tape, zero_logits), tape.constant(rng.normal_array({3, 6}))).value();
  for (double v : g0.values()) CHECK(v == 0.5);

  auto huge = zero_logits;
  huge.mlp_g.back().bias = Array({32}, 60.0);
  const Array g1 = gate(attach(tape, huge), tape.constant(rng.normal_array({3, 6}))).value();
  for (double v : g1.values()) CHECK(v == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("conditioning locality: the gate ignores the previous state") {
  Rng rng(3);
  const auto spec = EncoderSpec{};
  auto enc = DPCEncoder::init(spec, rng);
  const Array x_t = rng.normal_array({5, 6});
  const Array prev_a = rng.normal_array({5, 6});
  const Array prev_b = rng.normal_array({5, 6});
  Tape tape;
  auto vars = attach(tape, enc);
  Var xt = tape.constant(x_t);
  Var da = delta_state(xt, tape.constant(prev_a));
  Var db = delta_state(xt, tape.constant(prev_b));
  CHECK(gate(vars, xt).value().identical(gate(vars, xt).value()));
  CHECK_FALSE(damping_representation(vars, da, xt).value().identical(damping_representation(vars, db, xt).value()));
  // gate only sees x_t, so it is computed once regardless of which delta accompanies it
  const Array ga = gate(vars, xt).value();
  CHECK(ga.identical(gate(vars, tape.constant(x_t)).value()));
}

TEST_CASE("FiLM parameters") {
  Rng rng(4);
  const auto spec = EncoderSpec{};
  auto enc = DPCEncoder::init(spec, rng);
  Tape tape;
  auto vars = attach(tape, enc);
  Var x = tape.constant(rng.normal_array({9, 6}));
  Var dx = tape.constant(rng.normal_array({9, 6}, 0.1));

  SUBCASE("zero-initialised output is the identity") {
    FiLMParams film = encode(vars, spec, x, dx);
    REQUIRE(film.gamma.size() == 4);
    for (std::size_t s = 0; s < 4; ++s) {
      CHECK(film.gamma[s].shape() == ad::Shape{9, 64});
      for (double v : film.gamma[s].value().values()) CHECK(v == 1.0);
      for (double v : film.beta[s].value().values()) CHECK(v == 0.0);
    }
  }
  SUBCASE("closed gate is the identity whatever D is") {
    randomise_output(enc, rng);
    enc.output.bias = Array(enc.output.bias.shape());
    Tape t2;
    auto v2 = attach(t2, enc);
    Var g = t2.constant(Array({9, 32}));
    Var d = damping_representation(v2, t2.constant(dx.value()), t2.constant(x.value()));
    FiLMParams film = film_params(v2, spec, g, d);
    for (std::size_t s = 0; s < 4; ++s) {
      for (double v : film.gamma[s].value().values()) CHECK(v == 1.0);
      for (double v : film.beta[s].value().values()) CHECK(v == 0.0);
    }
  }
  SUBCASE("width audit") {
    randomise_output(enc, rng);
    Tape t2;
    auto v2 = attach(t2, enc);
    Var raw_in = t2.constant(x.value());
    FiLMParams film = encode(v2, spec, raw_in, t2.constant(dx.value()));
    std::size_t total = 0;
    for (std::size_t s = 0; s < film.gamma.size(); ++s) total += film.gamma[s].shape()[1] + film.beta[s].shape()[1];
    CHECK(total == 2 * spec.film_total());
    CHECK(enc.output.weight.dim(0) == 512);
  }
  SUBCASE("mismatched gate width") {
    CHECK_THROWS_AS(film_params(vars, spec, tape.constant(Array({9, 31})), tape.constant(Array({9, 32}))), Error);
  }
}

TEST_CASE("modulate") {
  Tape tape;
  Var f = tape.constant(Array({1, 2}, std::vector<double>{0.5, -1.0}));
  const Array y = modulate(f, tape.constant(Array({2}, 2.0)), tape.constant(Array({2}, 1.0))).value();
  CHECK(y[0] == 2.0);
  CHECK(y[1] == -1.0);
  CHECK(modulate(f, tape.constant(Array({1, 2}, 1.0)), tape.constant(Array({1, 2}, 0.0))).value().identical(f.value()));
  CHECK_THROWS_AS(modulate(f, tape.constant(Array({3}, 1.0)), tape.constant(Array({2}))), Error);
}

TEST_CASE("modulate gradients pass finite differences") {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng(seed);
    const Array f0 = rng.normal_array({4, 5});
    const Array g0 = rng.normal_array({4, 5});
    const Array b0 = rng.normal_array({4, 5});
    const std::vector<const Array*> params{&f0, &g0, &b0};
    const ParamPack pack(params);
    auto fn = [&](Tape&, Var theta) {
      auto p = pack.unpack(theta);
      return ad::sum(ad::tanh(modulate(p[0], p[1], p[2])));
    };
    const double err = ad::finite_diff_check(fn, pack.flatten(params));
    CHECK_MESSAGE(err <= 1e-5, "seed " << seed << " err " << err);
  }
}

TEST_CASE("encoder gradients pass finite differences end to end") {
  const auto spec = small_encoder();
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng(seed);
    auto enc = DPCEncoder::init(spec, rng);
    randomise_output(enc, rng);
    const Array x = rng.normal_array({4, 3});
    const Array dx = rng.normal_array({4, 3}, 0.2);
    const Array h = rng.normal_array({4, 3});
    const Array h2 = rng.normal_array({4, 2});
    const auto params = static_cast<const DPCEncoder&>(enc).parameters();
    const ParamPack pack(params);
    auto fn = [&](Tape& tape, Var theta) {
      auto p = pack.unpack(theta);
      EncoderVars vars;
      std::size_t k = 0;
      for (std::size_t i = 0; i < enc.mlp_d.size(); ++i, k += 2) vars.mlp_d.push_back({p[k], p[k + 1]});
      for (std::size_t i = 0; i < enc.mlp_g.size(); ++i, k += 2) vars.mlp_g.push_back({p[k], p[k + 1]});
      vars.output = {p[k], p[k + 1]};
      FiLMParams film = encode(vars, spec, tape.constant(x), tape.constant(dx));
      Var a = modulate(tape.constant(h), film.gamma[0], film.beta[0]);
      Var b = modulate(tape.constant(h2), film.gamma[1], film.beta[1]);
      return ad::sum(ad::square(a)) + ad::sum(ad::tanh(b));
    };
    const double err = ad::finite_diff_check(fn, pack.flatten(params));
    CHECK_MESSAGE(err <= 1e-5, "seed " << seed << " err " << err);
  }
}

TEST_CASE("zero-initialised conditioning leaves the network forward bit-identical") {
  Rng rng(21);
  bnn::NetworkSpec net_spec;
  auto net = bnn::BayesianNetwork::init(net_spec, rng);
  EncoderSpec enc_spec;
  auto enc = DPCEncoder::init(enc_spec, rng);
  const Array x = rng.normal_array({32, 12});
  for (auto mode : {bnn::Mode::Sampled, bnn::Mode::Mean}) {
    bnn::ForwardOptions opts;
    opts.mode = mode;
    Tape tape;
    auto vars = bnn::attach(tape, net);
    Var in = tape.constant(x);
    Var cur = ad::slice(in, 1, 0, 6);
    Var prev = ad::slice(in, 1, 6, 6);
    FiLMParams film = encode(attach(tape, enc), enc_spec, cur, delta_state(cur, prev));
    Rng a(5), b(5);
    const Array conditioned = bnn::forward(net_spec, vars, &film, in, a, opts).value();
    const Array plain = bnn::forward(net_spec, vars, nullptr, in, b, opts).value();
    CHECK(conditioned.identical(plain));
  }
}
