#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "param_pack.hpp"
#include "wheelload/bnn.hpp"
#include "wheelload/error.hpp"

using namespace wheelload;
using namespace wheelload::bnn;
using testing_support::ParamPack;

namespace {

VariationalLinearLayer scalar_layer(double mu, double sigma) {
  VariationalLinearLayer l;
  l.weight_mu = Array({1, 1}, mu);
  l.weight_rho = Array({1, 1}, rho_for_sigma(sigma));
  l.bias_mu = Array({1});
  l.bias_rho = Array({1}, -800.0);
  return l;
}

NetworkSpec small_spec() {
  NetworkSpec spec;
  spec.input_width = 3;
  spec.hidden = {5, 4};
  spec.output_width = 2;
  return spec;
}

// Plain tanh MLP with the given weights, masks fixed at `mask`.
Array reference_mlp(const BayesianNetwork& net, const Array& x, double mask) {
  Array h = x;
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    const auto& layer = net.layers[l];
    Array next({h.dim(0), layer.out()});
    for (std::size_t r = 0; r < h.dim(0); ++r) {
      for (std::size_t o = 0; o < layer.out(); ++o) {
        double acc = layer.bias_mu[o];
        for (std::size_t i = 0; i < layer.in(); ++i) acc += h.at(r, i) * layer.weight_mu.at(o, i);
        next.at(r, o) = l + 1 < net.layers.size() ? mask * std::tanh(acc) : acc;
      }
    }
    h = next;
  }
  return h;
}

}  // namespace

TEST_CASE("softplus parameterisation") {
  CHECK(ad::softplus(rho_for_sigma(0.05)) == doctest::Approx(0.05).epsilon(1e-14));
  CHECK(ad::softplus(rho_for_sigma(2.0)) == doctest::Approx(2.0).epsilon(1e-14));
  Rng rng(1);
  auto layer = VariationalLinearLayer::init(7, 3, 0.05, rng);
  layer.validate();
  CHECK(layer.weight_mu.shape() == Shape{3, 7});
  const Array sigma = layer.weight_sigma();
  for (double s : sigma.values()) CHECK(s > 0.0);
}

TEST_CASE("degenerate posterior samples its mean exactly") {
  Rng rng(2);
  auto layer = VariationalLinearLayer::init(4, 3, 0.05, rng);
  std::fill(layer.weight_rho.values().begin(), layer.weight_rho.values().end(), -800.0);
  std::fill(layer.bias_rho.values().begin(), layer.bias_rho.values().end(), -800.0);
  auto [w, b] = sample_weights(layer, rng);
  CHECK(w.identical(layer.weight_mu));
  CHECK(b.identical(layer.bias_mu));
}

TEST_CASE("weight sampling is reproducible per seed") {
  Rng init(3);
  const auto layer = VariationalLinearLayer::init(4, 3, 0.3, init);
  Rng a(99), b(99);
  CHECK(sample_weights(layer, a).first.identical(sample_weights(layer, b).first));
}

TEST_CASE("Monte-Carlo mean of a sampled weight") {
  const auto layer = scalar_layer(0.3, 0.2);
  Rng rng(4);
  const int n = 100000;
  double sum = 0.0;
  for (int i = 0; i < n; ++i) sum += sample_weights(layer, rng).first[0];
  CHECK(std::abs(sum / n - 0.3) <= 0.003);
}

TEST_CASE("reparameterised weight has unit gradient in mu") {
  Rng init(5);
  const auto layer = VariationalLinearLayer::init(3, 2, 0.4, init);
  Tape tape;
  LayerVars vars = attach(tape, layer);
  Rng rng(6);
  WeightSample w = sample_weights(vars, rng);
  auto grads = ad::backward(tape, ad::sum(w.weight));
  const Array g_mu = grads.wrt(vars.weight_mu);
  for (double g : g_mu.values()) CHECK(g == 1.0);
}

TEST_CASE("KL closed form") {
  const PriorSpec prior{1.0};
  VariationalLinearLayer at_prior = scalar_layer(0.0, 1.0);
  at_prior.bias_rho = Array({1}, rho_for_sigma(1.0));
  CHECK(std::abs(kl_to_prior(at_prior, prior)) < 1e-12);
  // the bias also sits at the prior, so only the unit-mean weight counts
  VariationalLinearLayer one = scalar_layer(1.0, 1.0);
  one.bias_rho = Array({1}, rho_for_sigma(1.0));
  CHECK(std::abs(kl_to_prior(one, prior) - 0.5) < 1e-12);

  Tape tape;
  LayerVars vars = attach(tape, one);
  CHECK(std::abs(kl_to_prior(vars, prior).value().item() - 0.5) < 1e-12);

  Rng rng(7);
  for (int k = 0; k < 10000; ++k) {
    auto l = VariationalLinearLayer::init(3, 2, 0.05, rng);
    for (auto& r : l.weight_rho.values()) r = rng.normal(0.0, 3.0);
    for (auto& m : l.weight_mu.values()) m = rng.normal(0.0, 2.0);
    const PriorSpec p{std::exp(rng.normal(0.0, 1.0))};
    CHECK(kl_to_prior(l, p) >= -1e-12);
    if (k % 1000 == 0) {
      Tape t;
      CHECK(kl_to_prior(attach(t, l), p).value().item() == doctest::Approx(kl_to_prior(l, p)).epsilon(1e-12));
    }
  }
}

TEST_CASE("NS-Dropout mask range and mean") {
  Rng rng(8);
  for (double sigma : {0.5, 1.0, 2.0}) {
    const Array m = ns_dropout_mask({1000000}, sigma, rng);
    double sum = 0.0, sum_sq = 0.0;
    const auto [lo, hi] = std::minmax_element(m.values().begin(), m.values().end());
    CHECK(*lo > 0.5);
    CHECK(*hi < 1.0);
    for (double v : m.values()) {
      sum += v;
      sum_sq += v * v;
    }
    const double n = static_cast<double>(m.size());
    const double mean = sum / n;
    const double sd = std::sqrt(sum_sq / n - mean * mean);
    CHECK(std::abs(mean - 0.75) <= 3.0 * sd / std::sqrt(n));
    if (sigma == 1.0) CHECK(std::abs(mean - 0.75) <= 0.002);
  }
  CHECK_THROWS_AS(ns_dropout_mask({2}, 0.0, rng), Error);
}

TEST_CASE("apply_ns_dropout keeps sign and bounds magnitude") {
  Rng rng(9);
  const Array x = rng.normal_array({50, 20}, 3.0);
  const Array y = apply_ns_dropout(x, NSDropoutSite{}, rng);
  for (std::size_t i = 0; i < x.size(); ++i) {
    CHECK(std::signbit(y[i]) == std::signbit(x[i]));
    CHECK(std::abs(y[i]) > std::abs(x[i]) / 2.0);
    CHECK(std::abs(y[i]) < std::abs(x[i]));
  }
  const Array zero({4, 4});
  CHECK(apply_ns_dropout(zero, NSDropoutSite{}, rng).identical(zero));
  const Array tight = apply_ns_dropout(x, NSDropoutSite{1e-9, true}, rng);
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(std::abs(tight[i] - 0.75 * x[i]) <= 1e-6 * std::abs(x[i]));
}

TEST_CASE("forward with conditioning and noise at identity is a plain MLP") {
  Rng rng(10);
  const auto spec = small_spec();
  auto net = BayesianNetwork::init(spec, rng);
  for (auto& l : net.layers) {
    std::fill(l.weight_rho.values().begin(), l.weight_rho.values().end(), -800.0);
    std::fill(l.bias_rho.values().begin(), l.bias_rho.values().end(), -800.0);
    for (auto& b : l.bias_mu.values()) b = rng.normal(0.0, 0.3);
  }
  const Array x = rng.normal_array({6, 3});
  Tape tape;
  auto vars = attach(tape, net);
  dpc::FiLMParams film;
  for (auto w : spec.hidden) {
    film.gamma.push_back(tape.constant(Array({6, w}, 1.0)));
    film.beta.push_back(tape.constant(Array({6, w}, 0.0)));
  }
  ForwardOptions sampled{Mode::Sampled, true, false, true};
  const Array y = forward(spec, vars, &film, tape.constant(x), rng, sampled).value();
  const Array ref = reference_mlp(net, x, 1.0);
  for (std::size_t i = 0; i < y.size(); ++i) CHECK(y[i] == doctest::Approx(ref[i]).epsilon(1e-13));

  ForwardOptions mean{Mode::Mean, true, true, true};
  const Array ym = forward(spec, vars, nullptr, tape.constant(x), rng, mean).value();
  const Array refm = reference_mlp(net, x, kMeanMask);
  for (std::size_t i = 0; i < ym.size(); ++i) CHECK(ym[i] == doctest::Approx(refm[i]).epsilon(1e-13));
}

TEST_CASE("sampled forward is reproducible and shape-checked") {
  Rng init(11);
  const auto spec = small_spec();
  const auto net = BayesianNetwork::init(spec, init);
  const Array x = init.normal_array({4, 3});
  auto run = [&](std::uint64_t seed) {
    Rng rng(seed);
    Tape tape;
    return forward(spec, attach(tape, net), nullptr, tape.constant(x), rng, {}).value();
  };
  CHECK(run(5).identical(run(5)));
  CHECK_FALSE(run(5).identical(run(6)));

  Tape tape;
  Rng rng(1);
  auto vars = attach(tape, net);
  CHECK_THROWS_AS(forward(spec, vars, nullptr, tape.constant(Array({4, 5})), rng, {}), Error);
  dpc::FiLMParams bad;
  bad.gamma.push_back(tape.constant(Array({4, 5}, 1.0)));
  bad.beta.push_back(tape.constant(Array({4, 5})));
  CHECK_THROWS_AS(forward(spec, vars, &bad, tape.constant(x), rng, {}), Error);
}

TEST_CASE("variational layer gradients pass finite differences") {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Rng init(seed);
    auto layer = VariationalLinearLayer::init(4, 3, 0.2, init);
    for (auto& r : layer.weight_rho.values()) r = init.normal(-1.0, 1.0);
    for (auto& r : layer.bias_rho.values()) r = init.normal(-1.0, 1.0);
    const std::vector<const Array*> params{&layer.weight_mu, &layer.weight_rho, &layer.bias_mu, &layer.bias_rho};
    const ParamPack pack(params);
    const Array x = init.normal_array({5, 4});
    const Array target = init.normal_array({5, 3});
    auto f = [&](Tape& tape, Var theta) {
      auto p = pack.unpack(theta);
      Rng noise(seed + 1000);  // same eps in every evaluation
      WeightSample w = sample_weights(LayerVars{p[0], p[1], p[2], p[3]}, noise);
      Var y = ad::matmul(tape.constant(x), ad::transpose(w.weight)) + w.bias;
      return ad::mean(ad::square(ad::tanh(y) - tape.constant(target))) +
             kl_to_prior(LayerVars{p[0], p[1], p[2], p[3]}, PriorSpec{0.7});
    };
    const double err = ad::finite_diff_check(f, pack.flatten(params));
    CHECK_MESSAGE(err <= 1e-5, "seed " << seed << " err " << err);
  }
}

TEST_CASE("NS-Dropout with frozen masks passes finite differences") {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Rng init(seed);
    const Array x0 = init.normal_array({6, 5});
    const Array w = init.normal_array({5, 5}, 0.5);
    auto f = [&](Tape& tape, Var x) {
      Rng masks(seed + 77);
      Var h = apply_ns_dropout(ad::tanh(x), NSDropoutSite{1.0, true}, masks);
      h = apply_ns_dropout(ad::tanh(ad::matmul(h, tape.constant(w))), NSDropoutSite{2.0, true}, masks);
      return ad::sum(ad::square(h));
    };
    const double err = ad::finite_diff_check(f, x0);
    CHECK_MESSAGE(err <= 1e-5, "seed " << seed << " err " << err);
  }
}

TEST_CASE("network output gradients w.r.t. mu, rho and FiLM inputs") {
  const auto spec = small_spec();
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Rng init(seed);
    auto net = BayesianNetwork::init(spec, init);
    const Array x = init.normal_array({4, 3});
    std::vector<Array> film_arrays;
    for (auto w : spec.hidden) {
      film_arrays.push_back(init.normal_array({4, w}, 0.3));  // gamma offset
      film_arrays.push_back(init.normal_array({4, w}, 0.3));  // beta
    }
    std::vector<const Array*> params = static_cast<const BayesianNetwork&>(net).parameters();
    for (const auto& a : film_arrays) params.push_back(&a);
    const ParamPack pack(params);
    auto f = [&](Tape& tape, Var theta) {
      auto p = pack.unpack(theta);
      NetworkVars vars;
      for (std::size_t l = 0; l < net.layers.size(); ++l) vars.layers.push_back({p[4 * l], p[4 * l + 1], p[4 * l + 2], p[4 * l + 3]});
      dpc::FiLMParams film;
      const std::size_t base = 4 * net.layers.size();
      for (std::size_t s = 0; s < spec.hidden.size(); ++s) {
        film.gamma.push_back(ad::add_scalar(p[base + 2 * s], 1.0));
        film.beta.push_back(p[base + 2 * s + 1]);
      }
      Rng noise(seed + 500);
      Var y = forward(spec, vars, &film, tape.constant(x), noise, {});
      return ad::mean(ad::square(y));
    };
    const double err = ad::finite_diff_check(f, pack.flatten(params));
    CHECK_MESSAGE(err <= 1e-5, "seed " << seed << " err " << err);
  }
}

TEST_CASE("predictive posterior") {
  Rng init(12);
  const auto spec = small_spec();
  auto net = BayesianNetwork::init(spec, init);
  const Array x = init.normal_array({8, 3});
  Rng rng(13);
  CHECK_THROWS_AS(predictive_posterior(net, nullptr, x, 1, rng), Error);
  try {
    predictive_posterior(net, nullptr, x, 0, rng);
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::InsufficientSamples);
  }

  SUBCASE("positive spread with uncertain weights") {
    const auto post = predictive_posterior(net, nullptr, x, 100, rng);
    for (double s : post.std.values()) CHECK(s > 0.0);
  }

  SUBCASE("degenerate posterior without dropout collapses to the forward") {
    for (auto& l : net.layers) {
      std::fill(l.weight_rho.values().begin(), l.weight_rho.values().end(), -800.0);
      std::fill(l.bias_rho.values().begin(), l.bias_rho.values().end(), -800.0);
    }
    ForwardOptions opts;
    opts.dropout = false;
    const auto post = predictive_posterior(net, nullptr, x, 16, rng, opts);
    const Array ref = reference_mlp(net, x, 1.0);
    for (std::size_t i = 0; i < ref.size(); ++i) {
      CHECK(post.std[i] == 0.0);
      CHECK(post.mean[i] == doctest::Approx(ref[i]).epsilon(1e-13));
    }
  }

  SUBCASE("single uncertain weight has unit spread") {
    NetworkSpec one;
    one.input_width = 1;
    one.hidden = {1};
    one.output_width = 1;
    BayesianNetwork lin = BayesianNetwork::init(one, init);
    // hidden unit saturates to exactly 1, so the output is the sampled weight
    lin.layers[0] = scalar_layer(0.0, 0.0);
    lin.layers[0].weight_rho[0] = -800.0;
    lin.layers[0].bias_mu[0] = 40.0;
    lin.layers[1] = scalar_layer(0.0, 1.0);
    ForwardOptions opts;
    opts.dropout = false;
    const auto post = predictive_posterior(lin, nullptr, Array({1, 1}, 1.0), 10000, rng, opts);
    CHECK(std::abs(post.std[0] - 1.0) <= 0.03);
  }

  SUBCASE("masks frozen at their mean when inactive in inference") {
    for (auto& l : net.layers) {
      std::fill(l.weight_rho.values().begin(), l.weight_rho.values().end(), -800.0);
      std::fill(l.bias_rho.values().begin(), l.bias_rho.values().end(), -800.0);
    }
    net.spec.dropout.active_in_inference = false;
    const auto post = predictive_posterior(net, nullptr, x, 8, rng);
    const Array ref = reference_mlp(net, x, kMeanMask);
    for (std::size_t i = 0; i < ref.size(); ++i) {
      CHECK(post.std[i] == 0.0);
      CHECK(post.mean[i] == doctest::Approx(ref[i]).epsilon(1e-13));
    }
  }
}
