#include <doctest.h>

#include <cmath>
#include <random>

#include "ibp/loss.hpp"
#include "ibp/network.hpp"
#include "ibp/rng.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using ibp::IntervalTensor;
using ibp::IntervalVar;
using ibp::LayerBounds;
using ibp::LayerKind;
using ibp::LayerSpec;
using ibp::NetworkSpec;
using ibp::Tape;
using ibp::Tensor;
using ibp::Var;

TEST_CASE("softmax cross entropy: uniform logits, stability, range check") {
  CHECK(ibp::softmax_cross_entropy_value(Tensor<double>::zeros({10}), 3) ==
        doctest::Approx(std::log(10.0)).epsilon(1e-9));
  const double stable =
      ibp::softmax_cross_entropy_value(Tensor<double>::from_vector({2}, {1000, 0}), 0);
  CHECK(std::isfinite(stable));
  CHECK(stable == doctest::Approx(0.0).epsilon(1e-9));
  CHECK_THROWS_AS(ibp::softmax_cross_entropy_value(Tensor<double>::zeros({4}), 4),
                  ibp::ValueError);
  CHECK_THROWS_AS(ibp::softmax_cross_entropy_value(Tensor<double>::zeros({4}), -1),
                  ibp::ValueError);
}

TEST_CASE("worst_case_logits: formula, degenerate interval, structure") {
  auto wc = ibp::worst_case_logits(
      IntervalTensor<double>{Tensor<double>::from_vector({2}, {1, 0}),
                             Tensor<double>::from_vector({2}, {3, 2})},
      0);
  CHECK(wc.at({0}) == 1.0);
  CHECK(wc.at({1}) == 2.0);

  auto logits = Tensor<double>::from_vector({3}, {0.3, -0.2, 0.9});
  auto degenerate = ibp::worst_case_logits(IntervalTensor<double>{logits, logits}, 1);
  for (int i = 0; i < 3; ++i) CHECK(degenerate.at({i}) == logits.at({i}));

  auto rng = ibp::make_rng(41);
  auto lo = test_util::random_tensor<double>({10}, rng, -1, 0);
  auto hi = ibp::kernels::add_scalar(lo, 0.5);
  for (int y = 0; y < 10; ++y) {
    auto v = ibp::worst_case_logits(IntervalTensor<double>{lo, hi}, y);
    int at_lower = 0;
    for (int i = 0; i < 10; ++i) {
      if (v.at({i}) == lo.at({i})) ++at_lower;
    }
    CHECK(at_lower == 1);  // exactly the true class takes its lower bound
    CHECK(v.at({y}) == lo.at({y}));
  }

  Tape<double> tape;
  IntervalVar<double> bad{tape.leaf(lo), tape.leaf(hi)};
  CHECK_THROWS_AS(ibp::worst_case_logits(bad, std::vector<int>{11}), ibp::ShapeError);
}

namespace {

// scalar-logit helpers for loss assembly tests
ibp::LossVars<double> make_ibp_loss(Tape<double>& tape, const Tensor<double>& logits,
                                    const Tensor<double>& lo, const Tensor<double>& hi, int label,
                                    double kappa) {
  Var<double> lv = tape.constant(logits);
  IntervalVar<double> bounds{tape.constant(lo), tape.constant(hi)};
  return ibp::ibp_loss(lv, bounds, std::vector<int>{label}, kappa);
}

}  // namespace

TEST_CASE("ibp_loss: kappa switch-offs and the degenerate interval") {
  auto rng = ibp::make_rng(42);
  auto logits = test_util::random_tensor<double>({1, 5}, rng);
  auto lo = ibp::kernels::add_scalar(logits, -0.3);
  auto hi = ibp::kernels::add_scalar(logits, 0.4);

  {
    Tape<double> tape;
    auto l = make_ibp_loss(tape, logits, lo, hi, 2, 1.0);
    auto b = l.breakdown(1.0, 0.3);
    CHECK(b.total == b.nominal_ce);  // kappa = 1: classical loss only
    CHECK(b.width_penalty == 0.0);
  }
  {
    Tape<double> tape;
    auto l = make_ibp_loss(tape, logits, lo, hi, 2, 0.5);
    auto b = l.breakdown(0.5, 0.3);
    CHECK(b.total == doctest::Approx(0.5 * b.nominal_ce + 0.5 * b.robust_ce).epsilon(1e-12));
  }
  {
    Tape<double> tape;
    auto l = make_ibp_loss(tape, logits, logits, logits, 2, 0.25);
    auto b = l.breakdown(0.25, 0.0);
    CHECK(b.robust_ce == b.nominal_ce);  // eps = 0
  }
  {
    Tape<double> tape;
    CHECK_THROWS_AS(make_ibp_loss(tape, logits, lo, hi, 2, 1.5), ibp::ValueError);
    CHECK_THROWS_AS(make_ibp_loss(tape, logits, lo, hi, 2, -0.1), ibp::ValueError);
  }
}

TEST_CASE("robust cross entropy never undercuts the nominal one") {
  auto rng = ibp::make_rng(43);
  for (int trial = 0; trial < 50; ++trial) {
    const int n = 2 + static_cast<int>(ibp::uniform_u32(rng, 9));
    auto logits = test_util::random_tensor<double>({1, n}, rng, -2, 2);
    auto widths = test_util::random_tensor<double>({1, n}, rng, 0, 1.5);
    auto lo = ibp::kernels::sub(logits, widths);
    auto hi = ibp::kernels::add(logits, widths);
    const int label = static_cast<int>(ibp::uniform_u32(rng, static_cast<std::uint32_t>(n)));
    Tape<double> tape;
    auto l = make_ibp_loss(tape, logits, lo, hi, label, 0.5);
    CHECK(l.robust_ce.value().item() >= l.nominal_ce.value().item() - 1e-12);
  }
}

TEST_CASE("constrained_ibp_loss: penalty arithmetic and switch-offs") {
  Tape<double> tape;
  // one dense layer bounds with widths [0.1, 0.2] for a single example
  auto lo = Tensor<double>::from_vector({1, 2}, {0.0, 0.0});
  auto hi = Tensor<double>::from_vector({1, 2}, {0.1, 0.2});
  std::vector<LayerBounds<double>> bounds;
  bounds.push_back(LayerBounds<double>{0, LayerKind::Dense,
                                       IntervalVar<double>{tape.constant(lo), tape.constant(hi)}});
  Var<double> logits = tape.constant(Tensor<double>::from_vector({1, 2}, {0.4, -0.1}));

  ibp::PenaltyOptions sum_opts;
  sum_opts.reduction = ibp::PenaltyReduction::SumPerLayer;
  auto with_sum = ibp::constrained_ibp_loss(logits, bounds, {0}, 0.5, sum_opts);
  CHECK(with_sum.width_penalty.value().item() == doctest::Approx(0.05).epsilon(1e-12));

  ibp::PenaltyOptions mean_opts;  // default reduction: per-layer mean
  auto with_mean = ibp::constrained_ibp_loss(logits, bounds, {0}, 0.5, mean_opts);
  CHECK(with_mean.width_penalty.value().item() == doctest::Approx(0.025).epsilon(1e-12));

  // lambda = 0 reduces exactly to ibp_loss
  ibp::PenaltyOptions off;
  off.lambda = 0.0;
  auto constrained = ibp::constrained_ibp_loss(logits, bounds, {0}, 0.5, off);
  auto plain = ibp::ibp_loss(logits, bounds.back().bounds, std::vector<int>{0}, 0.5);
  CHECK(constrained.total.value().item() == plain.total.value().item());

  ibp::PenaltyOptions bad;
  bad.lambda = -1.0;
  CHECK_THROWS_AS(ibp::constrained_ibp_loss(logits, bounds, {0}, 0.5, bad), ibp::ValueError);
}

TEST_CASE("constrained_ibp_loss: degenerate intervals zero the penalty") {
  auto seed_rng = ibp::make_rng(44);
  auto spec = oracles::random_spec(seed_rng);
  auto net = ibp::init_network<double>(spec, 4);
  auto images = test_util::random_tensor<double>(
      {2, spec.in_channels, spec.in_height, spec.in_width}, seed_rng, 0, 1);
  const std::vector<int> labels = {0, 1};

  Tape<double> tape;
  auto bound = net.bind(tape, false);
  test_util::ObjectiveSetup setup;
  setup.constrained = true;
  auto vars = test_util::build_objective<double>(net, tape, bound, images, labels, 0.0, 0.75,
                                                 setup);
  CHECK(vars.width_penalty.value().item() == 0.0);
  CHECK(vars.robust_ce.value().item() == vars.nominal_ce.value().item());
}

TEST_CASE("nominal_error: toy cases and an independent recount") {
  // a linear 2-class model that always predicts class 0
  NetworkSpec spec;
  spec.in_channels = 2;
  spec.in_height = 1;
  spec.in_width = 1;
  spec.layers = {LayerSpec::flatten(), LayerSpec::dense(2)};
  spec.num_classes = 2;
  auto net = ibp::init_network<float>(spec, 0);
  net.weights[0] = Tensor<float>::from_vector({2, 2}, {0, 0, 0, 0});
  net.biases[0] = Tensor<float>::from_vector({2}, {1, 0});

  ibp::Dataset all_zero;
  all_zero.images = Tensor<float>::from_vector({2, 2, 1, 1}, {1, 0, 0, 1});
  all_zero.labels = {0, 0};
  all_zero.num_classes = 2;
  CHECK(ibp::nominal_error(net, all_zero) == 0.0);

  ibp::Dataset permuted = all_zero;
  permuted.labels = {1, 1};  // adversarially permuted labels
  CHECK(ibp::nominal_error(net, permuted) == 1.0);

  // recount oracle on 100 random predictions
  auto seed_rng = ibp::make_rng(45);
  auto rspec = oracles::random_spec(seed_rng);
  auto rnet = ibp::init_network<float>(rspec, 5);
  ibp::Dataset data;
  data.images = test_util::random_tensor<float>(
      {100, rspec.in_channels, rspec.in_height, rspec.in_width}, seed_rng, 0, 1);
  data.num_classes = rspec.num_classes;
  for (int i = 0; i < 100; ++i) {
    data.labels.push_back(
        static_cast<int>(ibp::uniform_u32(seed_rng, static_cast<std::uint32_t>(rspec.num_classes))));
  }
  int correct = 0;
  for (int i = 0; i < 100; ++i) {
    auto logits = ibp::forward(rnet, data.image(i));
    const int pred = ibp::strict_argmax(logits.data(), rspec.num_classes);
    if (pred == data.labels[static_cast<std::size_t>(i)]) ++correct;
  }
  CHECK(ibp::nominal_error(rnet, data) ==
        doctest::Approx(1.0 - correct / 100.0).epsilon(1e-12));
}

TEST_CASE("verified_error: analytic linear cases and the eps=0 identity") {
  // logit margin w.x with w = [1, 0]; second logit pinned at zero
  NetworkSpec spec;
  spec.in_channels = 2;
  spec.in_height = 1;
  spec.in_width = 1;
  spec.layers = {LayerSpec::flatten(), LayerSpec::dense(2)};
  spec.num_classes = 2;
  auto net = ibp::init_network<float>(spec, 0);
  net.weights[0] = Tensor<float>::from_vector({2, 2}, {1, 0, 0, 0});
  net.biases[0] = Tensor<float>::zeros({2});

  ibp::Dataset data;
  data.images = Tensor<float>::from_vector({2, 2, 1, 1}, {1, 0, -1, 0});
  data.labels = {0, 1};
  data.num_classes = 2;

  ibp::EvalOptions opts;
  opts.input_clamp = false;  // inputs live outside [0,1] here
  CHECK(ibp::verified_error(net, data, 0.5, opts) == 0.0);
  CHECK(ibp::verified_error(net, data, 1.5, opts) == 1.0);

  // eps = 0: verified error equals the nominal error
  CHECK(ibp::verified_error(net, data, 0.0, opts) == ibp::nominal_error(net, data, opts));

  // verified error is non-decreasing in eps
  double prev = 0;
  for (double eps : {0.0, 0.3, 0.6, 0.9, 1.2, 1.5}) {
    const double v = ibp::verified_error(net, data, eps, opts);
    CHECK(v >= prev);
    prev = v;
  }
}

TEST_CASE("verified_error: untrained network at moderate radius fails everywhere") {
  auto spec = ibp::preset("small", {1, 28, 28}, 10);
  auto net = ibp::init_network<float>(spec, 77);
  auto data = ibp::make_synthetic_digits("test", 32, 9);
  CHECK(ibp::verified_error(net, data, 0.4) == 1.0);
}

TEST_CASE("gradients of both objectives match finite differences") {
  auto seed_rng = ibp::make_rng(46);
  for (int trial = 0; trial < 2; ++trial) {
    // resample until no relu input sits close enough to its kink for the
    // finite differences to cross it
    ibp::NetworkSpec spec;
    ibp::Network<double> net;
    ibp::Tensor<double> images;
    for (std::uint64_t attempt = 0;; ++attempt) {
      spec = oracles::random_spec(seed_rng);
      net = ibp::init_network<double>(spec, 300 + 100 * attempt + trial);
      oracles::nudge_away_from_zero(net, 1e-3);
      images = test_util::random_tensor<double>(
          {2, spec.in_channels, spec.in_height, spec.in_width}, seed_rng, 0.05, 0.95);
      if (test_util::relu_kink_margin(net, images, 0.08, true) > 5e-3) break;
      REQUIRE(attempt < 50);
    }
    std::vector<int> labels;
    for (int i = 0; i < 2; ++i) {
      labels.push_back(
          static_cast<int>(ibp::uniform_u32(seed_rng, static_cast<std::uint32_t>(spec.num_classes))));
    }
    for (bool constrained : {false, true}) {
      test_util::ObjectiveSetup setup;
      setup.constrained = constrained;
      const double eps = 0.08, kappa = 0.5;

      std::vector<Tensor<double>> analytic;
      {
        Tape<double> tape;
        auto bound = net.bind(tape, true);
        auto vars =
            test_util::build_objective<double>(net, tape, bound, images, labels, eps, kappa, setup);
        tape.backward(vars.total);
        for (std::size_t p = 0; p < net.weights.size(); ++p) {
          analytic.push_back(bound.weights[p].grad().clone());
          analytic.push_back(bound.biases[p].grad().clone());
        }
      }
      auto loss_value = [&]() {
        return test_util::objective_value<double>(net, images, labels, eps, kappa, setup);
      };
      for (std::size_t p = 0; p < net.weights.size(); ++p) {
        auto rw = oracles::gradcheck(net.weights[p].mutable_data(), analytic[2 * p].data(),
                                     net.weights[p].numel(), loss_value);
        INFO("objective constrained=", constrained, " layer ", p, " worst ", rw.worst_rel);
        CHECK(rw.failed == 0);
        auto rb = oracles::gradcheck(net.biases[p].mutable_data(), analytic[2 * p + 1].data(),
                                     net.biases[p].numel(), loss_value);
        CHECK(rb.failed == 0);
      }
    }
  }
}
