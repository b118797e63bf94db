#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "ibp/interval.hpp"
#include "ibp/network.hpp"
#include "ibp/rng.hpp"
#include "oracles.hpp"

using ibp::IntervalTensor;
using ibp::Tape;
using ibp::Tensor;
using ibp::Var;

namespace {

Tensor<double> random_tensor(std::vector<int> shape, std::mt19937& rng, double lo = -1,
                             double hi = 1) {
  Tensor<double> t = Tensor<double>::zeros(shape);
  double* p = t.mutable_data();
  for (std::int64_t i = 0; i < t.numel(); ++i) p[i] = ibp::uniform_real<double>(rng, lo, hi);
  return t;
}

IntervalTensor<double> random_interval(std::vector<int> shape, std::mt19937& rng) {
  Tensor<double> center = random_tensor(shape, rng);
  Tensor<double> radius = random_tensor(shape, rng, 0, 0.6);
  return IntervalTensor<double>::make(ibp::kernels::sub(center, radius),
                                      ibp::kernels::add(center, radius));
}

}  // namespace

TEST_CASE("input_interval: degenerate, clamped, and rejected") {
  auto x = Tensor<double>::from_vector({1}, {0.5});
  auto z0 = ibp::input_interval(x, 0.0);
  CHECK(z0.lower.at({0}) == 0.5);
  CHECK(z0.upper.at({0}) == 0.5);

  auto x2 = Tensor<double>::from_vector({2}, {0.5, 0.9});
  auto z1 = ibp::input_interval(x2, 0.2, std::make_pair(0.0, 1.0));
  CHECK(z1.lower.at({0}) == doctest::Approx(0.3));
  CHECK(z1.lower.at({1}) == doctest::Approx(0.7));
  CHECK(z1.upper.at({0}) == doctest::Approx(0.7));
  CHECK(z1.upper.at({1}) == doctest::Approx(1.0));

  // the MNIST radius, clamped at the bottom of the pixel range
  auto x3 = Tensor<double>::from_vector({1}, {0.0});
  auto z2 = ibp::input_interval(x3, 0.4, std::make_pair(0.0, 1.0));
  CHECK(z2.lower.at({0}) == 0.0);
  CHECK(z2.upper.at({0}) == doctest::Approx(0.4));

  CHECK_THROWS_AS(ibp::input_interval(x, -0.1), ibp::ValueError);
}

TEST_CASE("interval invariants are enforced") {
  auto lo = Tensor<double>::from_vector({2}, {0.0, 1.0});
  auto hi = Tensor<double>::from_vector({2}, {1.0, 0.5});
  CHECK_THROWS_AS(IntervalTensor<double>::make(lo, hi), ibp::ValueError);
  CHECK_THROWS_AS(IntervalTensor<double>::make(lo, Tensor<double>::zeros({3})),
                  ibp::ShapeError);
}

TEST_CASE("center/radius form round-trips exactly") {
  auto rng = ibp::make_rng(31);
  auto z = random_interval({7}, rng);
  auto cr = ibp::to_center_radius(z);
  for (int i = 0; i < 7; ++i) CHECK(cr.radius.at({i}) >= 0.0);
  auto back = ibp::from_center_radius(cr);
  for (int i = 0; i < 7; ++i) {
    CHECK(back.lower.at({i}) == doctest::Approx(z.lower.at({i})).epsilon(1e-14));
    CHECK(back.upper.at({i}) == doctest::Approx(z.upper.at({i})).epsilon(1e-14));
  }
}

TEST_CASE("propagate_affine: identity and the 45-degree rotation") {
  auto z = IntervalTensor<double>::make(Tensor<double>::from_vector({2}, {-1, -1}),
                                        Tensor<double>::from_vector({2}, {1, 1}));
  auto eye = Tensor<double>::from_vector({2, 2}, {1, 0, 0, 1});
  auto zero_b = Tensor<double>::zeros({2});
  auto same = ibp::propagate_affine(z, eye, zero_b);
  CHECK(same.lower.at({0}) == -1.0);
  CHECK(same.upper.at({1}) == 1.0);

  const double c = 1.0 / std::sqrt(2.0);
  auto rot = Tensor<double>::from_vector({2, 2}, {c, -c, c, c});
  auto rotated = ibp::propagate_affine(z, rot, zero_b);
  const double hw0 = 0.5 * (rotated.upper.at({0}) - rotated.lower.at({0}));
  const double hw1 = 0.5 * (rotated.upper.at({1}) - rotated.lower.at({1}));
  CHECK(hw0 == doctest::Approx(std::sqrt(2.0)).epsilon(1e-12));
  CHECK(hw1 == doctest::Approx(std::sqrt(2.0)).epsilon(1e-12));
}

TEST_CASE("propagate_affine: worked 1x2 example against corner enumeration") {
  auto z = IntervalTensor<double>::make(Tensor<double>::from_vector({2}, {0, -1}),
                                        Tensor<double>::from_vector({2}, {1, 1}));
  auto w = Tensor<double>::from_vector({1, 2}, {2, -3});
  auto b = Tensor<double>::from_vector({1}, {1});
  auto out = ibp::propagate_affine(z, w, b);
  CHECK(out.lower.at({0}) == doctest::Approx(-2.0));
  CHECK(out.upper.at({0}) == doctest::Approx(6.0));

  auto corners = oracles::affine_interval_corners(z, w, b);
  CHECK(out.lower.at({0}) == doctest::Approx(corners.lower.at({0})));
  CHECK(out.upper.at({0}) == doctest::Approx(corners.upper.at({0})));
}

TEST_CASE("propagate_affine is exact for a single affine layer (corner oracle)") {
  auto rng = ibp::make_rng(32);
  for (int trial = 0; trial < 30; ++trial) {
    const int n = 2 + static_cast<int>(ibp::uniform_u32(rng, 9));   // inputs <= 10
    const int m = 1 + static_cast<int>(ibp::uniform_u32(rng, 6));
    auto z = random_interval({n}, rng);
    auto w = random_tensor({m, n}, rng);
    auto b = random_tensor({m}, rng);
    auto fast = ibp::propagate_affine(z, w, b);
    auto exact = oracles::affine_interval_corners(z, w, b);
    for (int i = 0; i < m; ++i) {
      CHECK(oracles::close(fast.lower.at({i}), exact.lower.at({i}), 1e-6, 1e-9));
      CHECK(oracles::close(fast.upper.at({i}), exact.upper.at({i}), 1e-6, 1e-9));
    }
  }
}

TEST_CASE("propagate_conv2d: degenerate input collapses to the nominal output") {
  auto rng = ibp::make_rng(33);
  auto x = random_tensor({2, 5, 5}, rng);
  auto kernel = random_tensor({3, 2, 3, 3}, rng);
  auto bias = random_tensor({3}, rng);
  auto z = ibp::input_interval(x, 0.0);
  auto out = ibp::propagate_conv2d(z, kernel, bias, 1, 0);
  auto nominal = ibp::kernels::conv2d(x, kernel, &bias, 1, 0);
  for (std::int64_t i = 0; i < nominal.numel(); ++i) {
    CHECK(out.lower.data()[i] == nominal.data()[i]);  // bitwise in 64-bit mode
    CHECK(out.upper.data()[i] == nominal.data()[i]);
  }
}

TEST_CASE("propagate_conv2d: all-ones window with radius 0.1") {
  auto x = Tensor<double>::full({1, 3, 3}, 1.0);
  auto kernel = Tensor<double>::full({1, 1, 3, 3}, 1.0);
  auto bias = Tensor<double>::zeros({1});
  auto z = ibp::input_interval(x, 0.1);
  auto out = ibp::propagate_conv2d(z, kernel, bias, 1, 0);
  CHECK(out.lower.at({0, 0, 0}) == doctest::Approx(8.1));
  CHECK(out.upper.at({0, 0, 0}) == doctest::Approx(9.9));
}

TEST_CASE("propagate_conv2d: corner oracle on a 4-pixel sub-box") {
  auto rng = ibp::make_rng(34);
  auto x = random_tensor({1, 4, 4}, rng, 0, 1);
  auto kernel = random_tensor({2, 1, 3, 3}, rng);
  auto bias = random_tensor({2}, rng);
  const double eps = 0.25;

  // radius eps on 4 chosen pixels, all other pixels held fixed
  const int free_pixels[4] = {0, 5, 10, 15};
  auto lo = x.clone();
  auto hi = x.clone();
  for (int p : free_pixels) {
    lo.mutable_data()[p] -= eps;
    hi.mutable_data()[p] += eps;
  }
  auto out =
      ibp::propagate_conv2d(IntervalTensor<double>::make(lo, hi), kernel, bias, 1, 0);

  // brute force over the 16 corners of the sub-box
  auto lo_best = Tensor<double>::full({2, 2, 2}, std::numeric_limits<double>::infinity());
  auto hi_best = Tensor<double>::full({2, 2, 2}, -std::numeric_limits<double>::infinity());
  for (int mask = 0; mask < 16; ++mask) {
    auto probe = x.clone();
    for (int i = 0; i < 4; ++i) {
      probe.mutable_data()[free_pixels[i]] += ((mask >> i) & 1) ? eps : -eps;
    }
    auto y = oracles::conv2d_naive(probe, kernel, bias, 1, 0);
    for (std::int64_t i = 0; i < y.numel(); ++i) {
      lo_best.mutable_data()[i] = std::min(lo_best.data()[i], y.data()[i]);
      hi_best.mutable_data()[i] = std::max(hi_best.data()[i], y.data()[i]);
    }
  }
  for (std::int64_t i = 0; i < lo_best.numel(); ++i) {
    CHECK(out.lower.data()[i] == doctest::Approx(lo_best.data()[i]).epsilon(1e-10));
    CHECK(out.upper.data()[i] == doctest::Approx(hi_best.data()[i]).epsilon(1e-10));
  }
}

TEST_CASE("propagate_monotonic: relu, sigmoid, unknown id") {
  auto z = IntervalTensor<double>::make(Tensor<double>::from_vector({1}, {-1}),
                                        Tensor<double>::from_vector({1}, {2}));
  auto r = ibp::propagate_monotonic(z, "relu");
  CHECK(r.lower.at({0}) == 0.0);
  CHECK(r.upper.at({0}) == 2.0);

  auto pos = IntervalTensor<double>::make(Tensor<double>::from_vector({1}, {1}),
                                          Tensor<double>::from_vector({1}, {3}));
  auto rp = ibp::propagate_monotonic(pos, "relu");
  CHECK(rp.lower.at({0}) == 1.0);
  CHECK(rp.upper.at({0}) == 3.0);

  auto zero = IntervalTensor<double>::make(Tensor<double>::zeros({1}), Tensor<double>::zeros({1}));
  auto sg = ibp::propagate_monotonic(zero, "sigmoid");
  CHECK(sg.lower.at({0}) == doctest::Approx(0.5));
  CHECK(sg.upper.at({0}) == doctest::Approx(0.5));

  CHECK_THROWS_AS(ibp::propagate_monotonic(z, "softplus"), ibp::ValueError);
}

TEST_CASE("interval_widths: arithmetic, degenerate, rotated box") {
  auto box = IntervalTensor<double>::make(Tensor<double>::from_vector({2}, {0.3, 0.3}),
                                          Tensor<double>::from_vector({2}, {0.7, 0.7}));
  auto w = ibp::interval_widths(box);
  CHECK(w.at({0}) == doctest::Approx(0.4));
  CHECK(w.at({1}) == doctest::Approx(0.4));

  auto degenerate = ibp::input_interval(Tensor<double>::from_vector({3}, {1, 2, 3}), 0.0);
  auto wd = ibp::interval_widths(degenerate);
  for (int i = 0; i < 3; ++i) CHECK(wd.at({i}) == 0.0);

  // unit box through one 45-degree rotation: widths 2*sqrt(2)
  const double c = 1.0 / std::sqrt(2.0);
  auto unit = IntervalTensor<double>::make(Tensor<double>::from_vector({2}, {-1, -1}),
                                           Tensor<double>::from_vector({2}, {1, 1}));
  auto rot = ibp::propagate_affine(unit, Tensor<double>::from_vector({2, 2}, {c, -c, c, c}),
                                   Tensor<double>::zeros({2}));
  auto wr = ibp::interval_widths(rot);
  CHECK(wr.at({0}) == doctest::Approx(2 * std::sqrt(2.0)).epsilon(1e-12));
}

TEST_CASE("wrapping demo follows the sqrt(2)^n law") {
  auto steps = ibp::wrapping_demo(3);
  REQUIRE(steps.size() == 3);
  CHECK(steps[0].half_width == doctest::Approx(std::sqrt(2.0)).epsilon(1e-9));
  CHECK(steps[1].half_width == doctest::Approx(2.0).epsilon(1e-9));
  CHECK(steps[2].half_width == doctest::Approx(2 * std::sqrt(2.0)).epsilon(1e-9));
  for (const auto& s : steps) {
    CHECK(s.growth_factor == doctest::Approx(std::sqrt(2.0)).epsilon(1e-6));
  }
  // two exact rotations bring the true set back to the unit box while the
  // interval has doubled
  CHECK(steps[1].exact_half_width == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(steps[1].half_width == doctest::Approx(2.0 * steps[1].exact_half_width).epsilon(1e-9));
  CHECK_THROWS_AS(ibp::wrapping_demo(0), ibp::ValueError);
}

TEST_CASE("gradients flow through affine propagation including sign(W) * r") {
  auto rng = ibp::make_rng(35);
  auto z = random_interval({4}, rng);
  auto w0 = random_tensor({3, 4}, rng);
  // keep W entries away from the |W| kink for the finite differences
  double* wp = w0.mutable_data();
  for (std::int64_t i = 0; i < w0.numel(); ++i) {
    if (std::abs(wp[i]) < 1e-3) wp[i] = wp[i] < 0 ? -1e-3 : 1e-3;
  }
  auto b0 = random_tensor({3}, rng);

  Tensor<double> analytic_w, analytic_b, analytic_lo, analytic_hi;
  {
    Tape<double> tape;
    Var<double> w = tape.leaf(w0, true);
    Var<double> b = tape.leaf(b0, true);
    ibp::IntervalVar<double> zv{tape.leaf(z.lower, true), tape.leaf(z.upper, true)};
    auto out = ibp::propagate_affine(zv, w, b);
    tape.backward(sum(square(ibp::interval_widths(out)) ) );
    analytic_w = w.grad().clone();
    analytic_b = b.grad().clone();
    analytic_lo = zv.lower.grad().clone();
    analytic_hi = zv.upper.grad().clone();
  }
  auto loss_value = [&]() {
    Tape<double> tape;
    Var<double> w = tape.leaf(w0);
    Var<double> b = tape.leaf(b0);
    ibp::IntervalVar<double> zv{tape.leaf(z.lower), tape.leaf(z.upper)};
    auto out = ibp::propagate_affine(zv, w, b);
    return sum(square(ibp::interval_widths(out))).value().item();
  };
  auto rw = oracles::gradcheck(w0.mutable_data(), analytic_w.data(), w0.numel(), loss_value);
  CHECK(rw.failed == 0);
  auto rl =
      oracles::gradcheck(z.lower.mutable_data(), analytic_lo.data(), z.lower.numel(), loss_value);
  CHECK(rl.failed == 0);
  auto rh =
      oracles::gradcheck(z.upper.mutable_data(), analytic_hi.data(), z.upper.numel(), loss_value);
  CHECK(rh.failed == 0);
  // width is bias-independent
  for (std::int64_t i = 0; i < analytic_b.numel(); ++i) CHECK(analytic_b.data()[i] == 0.0);
}

TEST_CASE("soundness and monotonicity on random networks (spot check)") {
  auto seed_rng = ibp::make_rng(36);
  for (int trial = 0; trial < 6; ++trial) {
    auto spec = oracles::random_spec(seed_rng);
    auto net = ibp::init_network<double>(spec, 1000 + trial);
    const int d = spec.in_channels * spec.in_height * spec.in_width;

    auto x = random_tensor({spec.in_channels, spec.in_height, spec.in_width}, seed_rng, 0, 1);
    std::vector<double> prev_widths;
    for (double eps : {0.0, 0.01, 0.1}) {
      auto z0 = ibp::input_interval(x, eps, std::make_pair(0.0, 1.0));
      auto bounds = ibp::forward_interval(net, z0);

      // MONOTONICITY in eps at the logit layer
      auto widths = ibp::interval_widths(bounds.back());
      if (!prev_widths.empty()) {
        for (std::int64_t i = 0; i < widths.numel(); ++i) {
          CHECK(widths.data()[i] >= prev_widths[static_cast<std::size_t>(i)] - 1e-12);
        }
      }
      prev_widths = widths.to_vector();

      // SOUNDNESS on sampled perturbations
      auto rng = ibp::make_rng(500 + trial);
      for (int s = 0; s < 60; ++s) {
        auto probe = x.clone();
        double* pp = probe.mutable_data();
        for (int i = 0; i < d; ++i) {
          const double delta = s % 2 == 0 ? ibp::uniform_real<double>(rng, -eps, eps)
                                          : ((rng() & 1u) ? eps : -eps);
          pp[i] = std::clamp(pp[i] + delta, 0.0, 1.0);
        }
        Tape<double> tape;
        auto params = net.bind(tape, false);
        auto trace = ibp::network_forward_trace(net, tape, tape.constant(ibp::add_batch_dim(probe)),
                                                params);
        REQUIRE(trace.size() == bounds.size());
        for (std::size_t li = 0; li < trace.size(); ++li) {
          const auto& v = trace[li].value.value();
          for (std::int64_t i = 0; i < v.numel(); ++i) {
            CHECK(v.data()[i] >= bounds[li].lower.data()[i] - 1e-9);
            CHECK(v.data()[i] <= bounds[li].upper.data()[i] + 1e-9);
          }
        }
      }

      // DEGENERACY: eps = 0 bounds equal the nominal activations exactly
      if (eps == 0.0) {
        Tape<double> tape;
        auto params = net.bind(tape, false);
        auto trace = ibp::network_forward_trace(net, tape, tape.constant(ibp::add_batch_dim(x)),
                                                params);
        for (std::size_t li = 0; li < trace.size(); ++li) {
          const auto& v = trace[li].value.value();
          for (std::int64_t i = 0; i < v.numel(); ++i) {
            CHECK(v.data()[i] == bounds[li].lower.data()[i]);
            CHECK(v.data()[i] == bounds[li].upper.data()[i]);
          }
        }
      }
    }
  }
}
