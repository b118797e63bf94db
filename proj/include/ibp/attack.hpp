#pragma once

#include <cstdint>
#include <utility>

#include "ibp/data.hpp"
#include "ibp/loss.hpp"
#include "ibp/network.hpp"

namespace ibp {

// Untargeted sign-gradient PGD in the l-infinity ball of radius epsilon,
// run in raw pixel units against a network that applies its own normalization.
struct AttackConfig {
  double epsilon = 0;
  int iterations = 200;
  int restarts = 10;
  double step_size = -1;  // <= 0 selects epsilon / 8
  std::pair<double, double> clamp{0.0, 1.0};
  bool clamp_enabled = true;
  std::uint64_t seed = 0;

  double effective_step() const { return step_size > 0 ? step_size : epsilon / 8.0; }
  void validate() const;
};

struct AttackResult {
  Tensor<float> x_adv;
  bool success = false;
};

// Attack one [C,H,W] example. Each restart starts from x plus uniform noise,
// ascends the true-class cross entropy, and projects back to the ball and the
// pixel range after every step. Returns the first misclassified iterate, else
// the last iterate.
AttackResult pgd_attack(const Network<float>& net, const Tensor<float>& x, int y_true,
                        const AttackConfig& cfg);

// Fraction of examples where the attack succeeds or the clean input is
// already misclassified.
double pgd_error(const Network<float>& net, const Dataset& data, const AttackConfig& cfg,
                 const EvalOptions& opts = {});

}  // namespace ibp
