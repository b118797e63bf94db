#include "ibp/attack.hpp"

#include <algorithm>
#include <cstring>
#include <numeric>

#include "ibp/parallel.hpp"
#include "ibp/rng.hpp"

namespace ibp {

void AttackConfig::validate() const {
  if (epsilon < 0) throw ValueError("pgd: epsilon must be non-negative");
  if (iterations < 1) throw ValueError("pgd: iterations must be >= 1");
  if (restarts < 1) throw ValueError("pgd: restarts must be >= 1");
  if (epsilon > 0 && effective_step() <= 0) throw ValueError("pgd: step size must be positive");
}

namespace {

struct BatchAttackResult {
  Tensor<float> x_adv;
  std::vector<char> success;
};

// Attacks a contiguous batch; example_base keys the per-example noise so
// results do not depend on how the dataset was chunked.
BatchAttackResult attack_batch(const Network<float>& net, const Tensor<float>& images,
                               const std::vector<int>& labels, const AttackConfig& cfg,
                               int example_base) {
  const int batch = images.dim(0);
  const std::int64_t per = images.numel() / batch;
  const float eps = static_cast<float>(cfg.epsilon);
  const float step = static_cast<float>(cfg.effective_step());

  BatchAttackResult result;
  result.x_adv = images.clone();
  result.success.assign(static_cast<std::size_t>(batch), 0);

  auto record_predictions = [&](const Tensor<float>& logits, const Tensor<float>& points) {
    const int classes = logits.dim(1);
    for (int i = 0; i < batch; ++i) {
      if (result.success[static_cast<std::size_t>(i)]) continue;
      const int pred =
          strict_argmax(logits.data() + static_cast<std::int64_t>(i) * classes, classes);
      if (pred != labels[static_cast<std::size_t>(i)]) {
        result.success[static_cast<std::size_t>(i)] = 1;
        std::memcpy(result.x_adv.mutable_data() + i * per, points.data() + i * per,
                    static_cast<std::size_t>(per) * sizeof(float));
      }
    }
  };

  auto all_done = [&] {
    return std::all_of(result.success.begin(), result.success.end(),
                       [](char c) { return c != 0; });
  };

  // clean pass: success iff already misclassified
  {
    Tape<float> tape;
    auto params = net.bind(tape, false);
    Var<float> logits = network_forward(net, tape, tape.constant(images), params);
    record_predictions(logits.value(), images);
  }
  if (cfg.epsilon == 0 || all_done()) return result;

  Tensor<float> ball_lo = kernels::add_scalar(images, -eps);
  Tensor<float> ball_hi = kernels::add_scalar(images, eps);
  const float lo = static_cast<float>(cfg.clamp.first);
  const float hi = static_cast<float>(cfg.clamp.second);

  auto project = [&](Tensor<float> x) {
    x = kernels::max(kernels::min(x, ball_hi), ball_lo);
    if (cfg.clamp_enabled) x = kernels::clamp(x, lo, hi);
    return x;
  };

  Tensor<float> last_iterate = images.clone();
  for (int restart = 0; restart < cfg.restarts && !all_done(); ++restart) {
    // uniform start inside the ball, keyed by (seed, example, restart)
    Tensor<float> x = images.clone();
    float* xp = x.mutable_data();
    for (int i = 0; i < batch; ++i) {
      auto rng = make_rng(cfg.seed, static_cast<std::uint64_t>(example_base + i),
                          static_cast<std::uint64_t>(restart));
      for (std::int64_t j = 0; j < per; ++j) {
        xp[i * per + j] += uniform_real<float>(rng, -eps, eps);
      }
    }
    x = project(std::move(x));

    for (int iter = 0; iter < cfg.iterations; ++iter) {
      Tape<float> tape;
      auto params = net.bind(tape, false);
      Var<float> input = tape.leaf(x, true);
      Var<float> logits = network_forward(net, tape, input, params);
      record_predictions(logits.value(), x);
      if (all_done()) break;
      Var<float> loss = sum(softmax_cross_entropy(logits, labels));
      tape.backward(loss);
      Tensor<float> stepped =
          kernels::add(x, kernels::scale(kernels::sign(input.grad()), step));
      stepped = project(std::move(stepped));
      // frozen rows keep their successful point
      float* sp = stepped.mutable_data();
      const float* prev = x.data();
      for (int i = 0; i < batch; ++i) {
        if (result.success[static_cast<std::size_t>(i)]) {
          std::memcpy(sp + i * per, prev + i * per, static_cast<std::size_t>(per) * sizeof(float));
        }
      }
      x = std::move(stepped);
    }
    if (!all_done()) {
      // final evaluation of this restart's last iterate
      Tape<float> tape;
      auto params = net.bind(tape, false);
      Var<float> logits = network_forward(net, tape, tape.constant(x), params);
      record_predictions(logits.value(), x);
    }
    last_iterate = x;
  }

  // unsuccessful examples report the last iterate of the last restart run
  float* out = result.x_adv.mutable_data();
  const float* lp = last_iterate.data();
  for (int i = 0; i < batch; ++i) {
    if (!result.success[static_cast<std::size_t>(i)]) {
      std::memcpy(out + i * per, lp + i * per, static_cast<std::size_t>(per) * sizeof(float));
    }
  }
  return result;
}

}  // namespace

AttackResult pgd_attack(const Network<float>& net, const Tensor<float>& x, int y_true,
                        const AttackConfig& cfg) {
  cfg.validate();
  if (x.rank() != 3) {
    throw ShapeError("pgd_attack: expected a [C,H,W] input, got " + shape_to_string(x.shape()));
  }
  auto batch = attack_batch(net, add_batch_dim(x), {y_true}, cfg, 0);
  std::vector<int> shape(x.shape());
  return AttackResult{batch.x_adv.reshape(shape), batch.success[0] != 0};
}

double pgd_error(const Network<float>& net, const Dataset& data, const AttackConfig& cfg,
                 const EvalOptions& opts) {
  cfg.validate();
  const int n = opts.limit > 0 ? std::min(data.count(), opts.limit) : data.count();
  if (n == 0) return 0.0;
  std::vector<std::pair<int, int>> chunks;
  for (int b = 0; b < n; b += opts.batch_size) {
    chunks.emplace_back(b, std::min(b + opts.batch_size, n));
  }
  std::vector<int> successes(chunks.size(), 0);
  parallel_chunks(static_cast<int>(chunks.size()), opts.threads, [&](int ci) {
    const auto [begin, end] = chunks[static_cast<std::size_t>(ci)];
    std::vector<int> idx(static_cast<std::size_t>(end - begin));
    std::iota(idx.begin(), idx.end(), begin);
    auto result =
        attack_batch(net, gather_images(data, idx), gather_labels(data, idx), cfg, begin);
    successes[static_cast<std::size_t>(ci)] = static_cast<int>(
        std::count_if(result.success.begin(), result.success.end(), [](char c) { return c != 0; }));
  });
  const int total = std::accumulate(successes.begin(), successes.end(), 0);
  return static_cast<double>(total) / n;
}

}  // namespace ibp
