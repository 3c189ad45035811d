#include <doctest.h>

#include <random>

#include "support/oracles.hpp"
#include "ttl/layers/dense.hpp"
#include "ttl/layers/factory.hpp"
#include "ttl/layers/gradcheck.hpp"
#include "ttl/layers/svd.hpp"
#include "ttl/layers/ttm_layer.hpp"

using namespace ttl;
using namespace ttl::layers;
using core::Tensor64;
using ttl::testing::naive_matmul;
using ttl::testing::relative_error;
using ttl::testing::random_tensor;

namespace {

const FactorizedShape kFc768{{{4, 8}, {6, 8}, {8, 6}, {4, 8}}};

struct RandomTTM {
  FactorizedShape fs;
  TTMRanks ranks;
  TTMCores<double> cores;
  Tensor64 bias;
};

RandomTTM random_ttm(std::mt19937_64& rng, std::uint64_t seed) {
  const std::size_t m = 2 + rng() % 3;
  FactorizedShape fs;
  TTMRanks ranks{{1}};
  for (std::size_t k = 0; k < m; ++k) {
    fs.pairs.emplace_back(1 + rng() % 4, 1 + rng() % 4);
    ranks.ranks.push_back(k + 1 == m ? 1 : 1 + rng() % 5);
  }
  auto cores = ttm::init_cores<double>(fs, ranks, seed);
  // Unit-scale cores keep entries away from the FD noise floor.
  for (std::size_t k = 0; k < m; ++k) cores.core(k) = random_tensor(cores.core_shape(k), rng);
  return {fs, ranks, cores, random_tensor({fs.d_out()}, rng)};
}

Tensor64 dense_oracle(const Tensor64& x, const TTMCores<double>& cores, const Tensor64& bias) {
  Tensor64 y = naive_matmul(x, ttm::ttm_to_dense(cores));
  const std::size_t cols = bias.size();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += bias[i % cols];
  return y;
}

const ForwardStrategy kForwards[] = {ForwardStrategy::einsum, ForwardStrategy::fixed};
const BackwardStrategy kBackwards[] = {BackwardStrategy::autodiff, BackwardStrategy::full_einsum,
                                       BackwardStrategy::full_matrix};

}  // namespace

TEST_CASE("dense forward examples") {
  std::mt19937_64 rng(1);
  const Tensor64 w = random_tensor({4, 5}, rng);
  const Tensor64 b = random_tensor({5}, rng);
  DenseLayer<double> layer(w, b);

  const Tensor64 y0 = layer.forward(Tensor64({3, 4}));
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t c = 0; c < 5; ++c) CHECK(y0.at({r, c}) == b[c]);

  Tensor64 eye({4, 4});
  for (std::size_t i = 0; i < 4; ++i) eye.at({i, i}) = 1.0;
  DenseLayer<double> identity(eye, Tensor64({4}));
  const Tensor64 x = random_tensor({3, 4}, rng);
  CHECK(identity.forward(x) == x);

  const Tensor64 y = DenseLayer<double>(w, Tensor64({5})).forward(x);
  CHECK(relative_error(y, naive_matmul(x, w)) < 1e-12);
  CHECK_THROWS_AS(layer.forward(Tensor64({3, 5})), DimensionError);
}

TEST_CASE("dense backward") {
  std::mt19937_64 rng(2);
  DenseLayer<double> layer(random_tensor({4, 5}, rng), random_tensor({5}, rng));
  CHECK_THROWS_AS(layer.backward(Tensor64({3, 5})), StateError);
  const Tensor64 x = random_tensor({3, 4}, rng);
  layer.forward(x);
  const auto zero = layer.backward(Tensor64({3, 5}));
  CHECK(zero.grad_input == Tensor64({3, 4}));
  CHECK(zero.grad_params[0] == Tensor64({4, 5}));
  CHECK(zero.grad_bias == Tensor64({5}));

  DenseLayer<double> scalar(Tensor64({1, 1}, {3.0}), Tensor64({1}, {0.5}));
  scalar.forward(Tensor64({1, 1}, {2.0}));
  const auto g = scalar.backward(Tensor64({1, 1}, {7.0}));
  CHECK(g.grad_input[0] == 21.0);
  CHECK(g.grad_params[0][0] == 14.0);
  CHECK(g.grad_bias[0] == 7.0);

  const auto report = finite_difference_check(layer, x, random_tensor({3, 5}, rng));
  CHECK(report.worst() < 1e-6);
}

TEST_CASE("ttm forward examples") {
  std::mt19937_64 rng(3);
  auto layer = TTMLayer<double>::random(kFc768, TTMRanks::uniform(4, 3), ForwardStrategy::einsum,
                                        BackwardStrategy::full_einsum, 1);
  CHECK(layer.forward(Tensor64({2, 768})).shape() == core::Shape{2, 3072});

  const FactorizedShape fs{{{2, 3}, {3, 2}}};
  const auto cores = ttm::init_cores<double>(fs, TTMRanks::uniform(2, 2), 7);
  const Tensor64 bias = random_tensor({6}, rng);
  TTMLayer<double> e(cores, bias, ForwardStrategy::einsum, BackwardStrategy::full_einsum);
  TTMLayer<double> f(cores, bias, ForwardStrategy::fixed, BackwardStrategy::autodiff);

  const Tensor64 y0 = e.forward(Tensor64({3, 6}));
  for (std::size_t i = 0; i < y0.size(); ++i) CHECK(y0[i] == bias[i % 6]);

  const Tensor64 x = random_tensor({5, 6}, rng);
  const Tensor64 ye = e.forward(x);
  const Tensor64 yf = f.forward(x);
  CHECK(relative_error(ye, dense_oracle(x, cores, bias)) < 1e-12);
  CHECK(relative_error(yf, ye) < 1e-14);
}

TEST_CASE("ttm construction and state errors") {
  const FactorizedShape fs{{{2, 3}, {3, 2}}};
  const auto cores = ttm::init_cores<double>(fs, TTMRanks::uniform(2, 2), 7);
  CHECK_THROWS_AS(TTMLayer<double>(cores, Tensor64({6}), ForwardStrategy::einsum,
                                   BackwardStrategy::autodiff),
                  ParameterError);
  CHECK_THROWS_AS(TTMLayer<double>(cores, Tensor64({5}), ForwardStrategy::fixed,
                                   BackwardStrategy::autodiff),
                  DimensionError);
  TTMLayer<double> layer(cores, Tensor64({6}), ForwardStrategy::fixed, BackwardStrategy::autodiff);
  CHECK_THROWS_AS(layer.backward(Tensor64({2, 6})), StateError);
  layer.forward(Tensor64({2, 6}));
  CHECK_THROWS_AS(layer.backward(Tensor64({3, 6})), DimensionError);
  layer.parameters_changed();
  CHECK_THROWS_AS(layer.backward(Tensor64({2, 6})), StateError);
}

TEST_CASE("ttm backward: zero gradient gives zeros") {
  const FactorizedShape fs{{{2, 3}, {3, 2}, {2, 2}}};
  const auto cores = ttm::init_cores<double>(fs, TTMRanks::uniform(3, 2), 7);
  std::mt19937_64 rng(4);
  const Tensor64 x = random_tensor({3, 12}, rng);
  for (auto fwd : kForwards)
    for (auto bwd : kBackwards) {
      if (fwd == ForwardStrategy::einsum && bwd == BackwardStrategy::autodiff) continue;
      TTMLayer<double> layer(cores, Tensor64({12}), fwd, bwd);
      layer.forward(x);
      const auto g = layer.backward(Tensor64({3, 12}));
      CHECK(g.grad_input == Tensor64({3, 12}));
      for (std::size_t k = 0; k < 3; ++k) CHECK(g.grad_params[k] == Tensor64(cores.core_shape(k)));
      CHECK(g.grad_bias == Tensor64({12}));
    }
}

TEST_CASE("ttm with one core matches the dense layer") {
  std::mt19937_64 rng(5);
  const FactorizedShape fs{{{4, 5}}};
  const auto cores = ttm::init_cores<double>(fs, TTMRanks::uniform(1, 1), 3);
  const Tensor64 bias = random_tensor({5}, rng);
  TTMLayer<double> t(cores, bias, ForwardStrategy::einsum, BackwardStrategy::full_einsum);
  DenseLayer<double> d(cores.core(0).reshaped({4, 5}), bias);
  const Tensor64 x = random_tensor({3, 4}, rng);
  const Tensor64 g = random_tensor({3, 5}, rng);
  CHECK(relative_error(t.forward(x), d.forward(x)) < 1e-15);
  const auto gt = t.backward(g);
  const auto gd = d.backward(g);
  CHECK(relative_error(gt.grad_input, gd.grad_input) < 1e-15);
  CHECK(relative_error(gt.grad_params[0].reshaped({4, 5}), gd.grad_params[0]) < 1e-15);
  CHECK(gt.grad_bias == gd.grad_bias);
}

TEST_CASE("ttm backward strategies match finite differences and each other") {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 5; ++trial) {
    const RandomTTM t = random_ttm(rng, trial);
    const Tensor64 x = random_tensor({3, t.fs.d_in()}, rng);
    const Tensor64 g = random_tensor({3, t.fs.d_out()}, rng);
    std::vector<LayerGradients<double>> grads;
    for (auto bwd : kBackwards) {
      TTMLayer<double> layer(t.cores, t.bias, ForwardStrategy::fixed, bwd);
      const auto report = finite_difference_check(layer, x, g);
      CHECK_MESSAGE(report.worst() < 1e-6, report.to_string());
      layer.forward(x);
      grads.push_back(layer.backward(g));
    }
    CHECK(gradient_difference(grads[0], grads[1]) < 1e-10);
    CHECK(gradient_difference(grads[0], grads[2]) < 1e-10);
    CHECK(gradient_difference(grads[1], grads[2]) < 1e-10);
  }
}

TEST_CASE("property: forward strategies agree with the dense reconstruction") {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 200; ++trial) {
    const RandomTTM t = random_ttm(rng, 100 + trial);
    const Tensor64 x = random_tensor({1 + rng() % 4, t.fs.d_in()}, rng);
    const Tensor64 oracle = dense_oracle(x, t.cores, t.bias);
    TTMLayer<double> e(t.cores, t.bias, ForwardStrategy::einsum, BackwardStrategy::full_matrix);
    TTMLayer<double> f(t.cores, t.bias, ForwardStrategy::fixed, BackwardStrategy::autodiff);
    const Tensor64 ye = e.forward(x);
    const Tensor64 yf = f.forward(x);
    CHECK(relative_error(ye, oracle) < 1e-12);
    CHECK(relative_error(yf, oracle) < 1e-12);
    CHECK(relative_error(ye, yf) < 1e-12);

    const Tensor64 g = random_tensor(ye.shape(), rng);
    std::vector<LayerGradients<double>> grads;
    for (auto bwd : kBackwards) {
      TTMLayer<double> layer(t.cores, t.bias, ForwardStrategy::fixed, bwd);
      layer.forward(x);
      grads.push_back(layer.backward(g));
    }
    e.backward(g);
    CHECK(gradient_difference(grads[0], grads[1]) < 1e-10);
    CHECK(gradient_difference(grads[0], grads[2]) < 1e-10);
    CHECK(gradient_difference(grads[1], grads[2]) < 1e-10);
  }
}

TEST_CASE("ttm plans follow batch size changes") {
  std::mt19937_64 rng(8);
  const RandomTTM t = random_ttm(rng, 1);
  TTMLayer<double> layer(t.cores, t.bias, ForwardStrategy::einsum, BackwardStrategy::full_einsum);
  for (std::size_t batch : {2, 5, 2}) {
    const Tensor64 x = random_tensor({batch, t.fs.d_in()}, rng);
    CHECK(relative_error(layer.forward(x), dense_oracle(x, t.cores, t.bias)) < 1e-12);
    const auto g = layer.backward(random_tensor({batch, t.fs.d_out()}, rng));
    CHECK(g.grad_input.shape() == x.shape());
  }
}

TEST_CASE("svd_from_dense examples") {
  Tensor64 diag({3, 3});
  diag.at({0, 0}) = 3;
  diag.at({1, 1}) = 2;
  diag.at({2, 2}) = 1;
  const auto layer = svd_from_dense(diag, 2);
  Tensor64 expected({3, 3});
  expected.at({0, 0}) = 3;
  expected.at({1, 1}) = 2;
  CHECK(relative_error(layer.reconstruct(), expected) < 1e-12);

  std::mt19937_64 rng(9);
  const Tensor64 w = random_tensor({5, 7}, rng);
  CHECK(relative_error(svd_from_dense(w, 5).reconstruct(), w) < 1e-10);
  CHECK_THROWS_AS(svd_from_dense(w, 6), ParameterError);
  CHECK_THROWS_AS(svd_from_dense(w, 0), ParameterError);
  CHECK(svd_weight_count(768, 3072, 50) == 192000);
  CHECK(svd_from_dense(w, 3).weight_count() == 3 * (5 + 7));
}

TEST_CASE("svd layer forward and backward") {
  std::mt19937_64 rng(10);
  const Tensor64 w = random_tensor({6, 4}, rng);
  const Tensor64 b = random_tensor({4}, rng);
  auto svd = svd_from_dense(w, 4, b);
  DenseLayer<double> dense(w, b);
  const Tensor64 x = random_tensor({3, 6}, rng);
  CHECK(relative_error(svd.forward(x), dense.forward(x)) < 1e-10);
  const Tensor64 y0 = svd.forward(Tensor64({2, 6}));
  for (std::size_t i = 0; i < y0.size(); ++i) CHECK(y0[i] == doctest::Approx(b[i % 4]).epsilon(1e-14));

  auto low = svd_from_dense(w, 2, b);
  const auto report = finite_difference_check(low, x, random_tensor({3, 4}, rng));
  CHECK_MESSAGE(report.worst() < 1e-6, report.to_string());
  CHECK(low.parameter_names() == std::vector<std::string>{"w1", "w2", "bias"});
}

TEST_CASE("fixed schedule cost equals the per-core formula") {
  const Extent batch = 8192;
  for (Extent r : {1, 4, 16}) {
    const TTMRanks ranks = TTMRanks::uniform(4, r);
    const auto cost = fixed_forward_cost(kFc768, ranks, batch, false, 8);
    // sum_k B * prod_{l<k} J_l * prod_{l>=k} I_l * R_{k-1} * J_k * R_k
    std::uint64_t formula = 0;
    for (std::size_t k = 0; k < 4; ++k) {
      std::uint64_t t = batch * ranks.ranks[k] * kFc768.pairs[k].second * ranks.ranks[k + 1];
      for (std::size_t l = 0; l < k; ++l) t *= kFc768.pairs[l].second;
      for (std::size_t l = k; l < 4; ++l) t *= kFc768.pairs[l].first;
      formula += t;
    }
    CHECK(cost.total_flops == formula);
    CHECK(ttm_forward_plan(kFc768, ranks, batch).total_flops() <= formula);
  }
}

TEST_CASE("modeled costs match executed costs") {
  std::mt19937_64 rng(11);
  const RandomTTM t = random_ttm(rng, 3);
  const Tensor64 x = random_tensor({4, t.fs.d_in()}, rng);
  const Tensor64 g = random_tensor({4, t.fs.d_out()}, rng);
  for (auto fwd : kForwards)
    for (auto bwd : kBackwards) {
      if (fwd == ForwardStrategy::einsum && bwd == BackwardStrategy::autodiff) continue;
      TTMLayer<double> layer(t.cores, t.bias, fwd, bwd);
      layer.forward(x);
      layer.backward(g);
      const auto model = ttm_cost_model(t.fs, t.ranks, 4, fwd, bwd, 8);
      CHECK(model.forward.total_flops == layer.last_forward_cost().total_flops);
      CHECK(model.forward.saved_activation_bytes == layer.last_forward_cost().saved_activation_bytes);
      CHECK(model.backward.total_flops == layer.last_backward_cost().total_flops);
      CHECK(model.backward.peak_intermediate_bytes == layer.last_backward_cost().peak_intermediate_bytes);
    }
}

TEST_CASE("memory and flop ordering on the 768x3072 layer") {
  const TTMRanks ranks = TTMRanks::uniform(4, 16);
  const Extent batch = 16 * 512;
  auto cost = [&](ForwardStrategy f, BackwardStrategy b) {
    return ttm_cost_model(kFc768, ranks, batch, f, b, 4);
  };
  std::vector<StrategyCost> all;
  for (auto f : kForwards)
    for (auto b : kBackwards) all.push_back(cost(f, b));
  const auto fe = cost(ForwardStrategy::einsum, BackwardStrategy::full_einsum);
  const auto fm = cost(ForwardStrategy::einsum, BackwardStrategy::full_matrix);
  const auto fixed_ad = cost(ForwardStrategy::fixed, BackwardStrategy::autodiff);
  const auto einsum_ad = cost(ForwardStrategy::einsum, BackwardStrategy::autodiff);
  CHECK_FALSE(einsum_ad.runnable);
  CHECK(fm.saved_activation_bytes() == fe.saved_activation_bytes());
  CHECK(fe.saved_activation_bytes() < fixed_ad.saved_activation_bytes());
  CHECK(fe.saved_activation_bytes() < einsum_ad.saved_activation_bytes());
  for (const auto& c : all) CHECK(c.saved_activation_bytes() <= fixed_ad.saved_activation_bytes());
  CHECK(fm.backward.total_flops < fe.backward.total_flops);
  // B * (768 + 24576 + 32768 + 24576) floats kept by the chain.
  CHECK(fixed_ad.saved_activation_bytes() == std::uint64_t{batch} * 82688 * 4);
}

TEST_CASE("parameter count ordering") {
  LayerConfig ttm_cfg{LayerKind::ttm, 768, 3072, 4, 16};
  LayerConfig svd_cfg{LayerKind::svd, 768, 3072, 0, 50};
  LayerConfig dense_cfg{LayerKind::dense, 768, 3072};
  CHECK(ttm_cfg.weight_count() == 25600);
  CHECK(svd_cfg.weight_count() == 192000);
  CHECK(dense_cfg.weight_count() == 2359296);
  CHECK(make_layer<double>(ttm_cfg)->weight_count() == 25600);
}

TEST_CASE("layer config validation") {
  LayerConfig bad_svd{LayerKind::svd, 4, 6, 0, 5};
  CHECK_THROWS_AS(bad_svd.validate(), ParameterError);
  LayerConfig bad_pair{LayerKind::ttm, 768, 3072, 4, 16};
  bad_pair.forward = ForwardStrategy::einsum;
  bad_pair.backward = BackwardStrategy::autodiff;
  CHECK_THROWS_AS(bad_pair.validate(), ParameterError);
  LayerConfig bad_pairs{LayerKind::ttm, 12, 6};
  bad_pairs.pairs = {{2, 3}, {3, 3}};
  bad_pairs.rank = 2;
  CHECK_THROWS_AS(bad_pairs.validate(), DimensionError);
  CHECK_THROWS_AS(parse_backward("reverse"), ParameterError);
  CHECK(parse_forward("fixed") == ForwardStrategy::fixed);
}

TEST_CASE("dense and svd modeled costs match executed costs") {
  std::mt19937_64 rng(31);
  for (auto kind : {LayerKind::dense, LayerKind::svd}) {
    LayerConfig cfg;
    cfg.kind = kind;
    cfg.d_in = 12;
    cfg.d_out = 9;
    cfg.rank = 4;
    auto layer = make_layer<double>(cfg);
    const Tensor64 x = random_tensor({5, 12}, rng);
    layer->forward(x);
    layer->backward(random_tensor({5, 9}, rng));
    const StrategyCost model = modeled_cost(cfg, 5, sizeof(double));
    CHECK(model.forward.total_flops == layer->last_forward_cost().total_flops);
    CHECK(model.backward.total_flops == layer->last_backward_cost().total_flops);
    CHECK(model.saved_activation_bytes() == layer->last_forward_cost().saved_activation_bytes);
  }
  CHECK(modeled_cost(LayerConfig{LayerKind::dense, 12, 9}, 5, 8).total_flops() == 3 * 5 * 12 * 9);
  const StrategyCost svd = svd_cost_model(12, 9, 4, 5, 8);
  CHECK(svd.forward.total_flops == 5 * 4 * (12 + 9));
  CHECK(svd.saved_activation_bytes() == 5 * (12 + 4) * 8);
  CHECK(svd.forward.peak_intermediate_bytes == 5 * 4 * 8);
}
