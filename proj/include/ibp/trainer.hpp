#pragma once

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "ibp/attack.hpp"
#include "ibp/checkpoint.hpp"
#include "ibp/data.hpp"
#include "ibp/loss.hpp"
#include "ibp/network.hpp"
#include "ibp/schedule.hpp"

namespace ibp {

enum class LossKind { Ibp, ConstrainedIbp };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::Adam;
  double learning_rate = 1e-3;
  std::vector<int> decay_milestones;  // epochs at which lr is multiplied by decay_factor
  double decay_factor = 0.1;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
};

struct TrainConfig {
  LossKind loss = LossKind::Ibp;
  PenaltyOptions penalty;    // lambda and reduction, for the constrained objective
  Schedule eps_schedule;     // 0 -> eps_train
  Schedule kappa_schedule;   // 1 -> 1/2
  OptimizerConfig optimizer;
  int epochs = 1;
  int batch_size = 100;
  std::uint64_t seed = 0;
  bool augment = false;
  int augment_translate = 4;
  double epsilon_eval = -1;  // < 0: evaluate at the eps schedule's end value
  bool input_clamp = true;
  int eval_batch = 256;
  int eval_limit = 0;        // cap on test examples per epoch eval, 0 = all
  int threads = 1;
  int chunk_size = 32;       // gradient chunk; fixed so reductions are order-stable
  int checkpoint_every = 0;  // epochs between periodic checkpoints, 0 = final only
  std::string out_dir;       // when set: metrics.csv and checkpoints land here
  int start_epoch = 0;       // resume position

  double epsilon_eval_value() const {
    return epsilon_eval >= 0 ? epsilon_eval : eps_schedule.end_value;
  }
};

struct EpochMetrics {
  int epoch = 0;
  double epsilon = 0;  // training radius in effect at the end of the epoch
  double kappa = 1;
  double train_total = 0;
  double train_nominal_ce = 0;
  double train_robust_ce = 0;
  double train_width_penalty = 0;
  double test_error = 0;
  double verified_test_error = 0;
  double width_sum = 0;  // sum over layers of mean squared widths, test set, current radius
  double wall_time_s = 0;
};

std::string metrics_csv_header();
std::string metrics_csv_row(const EpochMetrics& m);

// The example order used for a given epoch; exposed so reference trainers in
// tests can replay the exact batch sequence.
std::vector<int> epoch_shuffle(std::uint64_t seed, int epoch, int count);

struct TrainResult {
  Network<float> net;
  std::vector<EpochMetrics> metrics;
  OptimizerState optimizer;
};

// Seeded shuffle / batch / two forward passes / selected loss / optimizer
// step, with per-epoch test metrics. Aborts with NumericError when a loss
// goes non-finite. Pass resume state and start_epoch to continue a run;
// trajectories are bit-reproducible for a fixed (seed, config, dataset).
TrainResult train(Network<float> net, const Dataset& train_data, const Dataset& test_data,
                  const TrainConfig& cfg, const OptimizerState* resume = nullptr,
                  std::ostream* log = nullptr);

struct EvalReport {
  double epsilon = 0;
  double nominal = 0;
  double verified = 0;
  double pgd = -1;
  bool pgd_run = false;
};

EvalReport evaluate(const Network<float>& net, const Dataset& test, double epsilon,
                    const std::optional<AttackConfig>& attack = std::nullopt,
                    const EvalOptions& opts = {});

}  // namespace ibp
