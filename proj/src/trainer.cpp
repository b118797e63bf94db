#include "ibp/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <ostream>
#include <sstream>

#include "ibp/parallel.hpp"
#include "ibp/rng.hpp"

namespace ibp {

namespace {

constexpr std::uint64_t kShuffleTag = 0x51u;
constexpr std::uint64_t kAugmentTag = 0xA6u;

std::string format_g(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  return buf;
}

Tensor<float> slice_rows(const Tensor<float>& t, int begin, int end) {
  std::vector<int> shape = t.shape();
  const std::int64_t per = t.numel() / shape[0];
  shape[0] = end - begin;
  std::vector<float> out(static_cast<std::size_t>(per * (end - begin)));
  std::memcpy(out.data(), t.data() + begin * per, out.size() * sizeof(float));
  return Tensor<float>::from_vector(std::move(shape), std::move(out));
}

// Parameters in checkpoint order: weight then bias per parameterized layer.
std::vector<Tensor<float>*> parameter_list(Network<float>& net) {
  std::vector<Tensor<float>*> out;
  for (std::size_t i = 0; i < net.weights.size(); ++i) {
    out.push_back(&net.weights[i]);
    out.push_back(&net.biases[i]);
  }
  return out;
}

std::vector<Var<float>> bound_list(const Network<float>::Bound& bound) {
  std::vector<Var<float>> out;
  for (std::size_t i = 0; i < bound.weights.size(); ++i) {
    out.push_back(bound.weights[i]);
    out.push_back(bound.biases[i]);
  }
  return out;
}

OptimizerState fresh_state(const std::vector<Tensor<float>*>& params, OptimizerKind kind) {
  OptimizerState s;
  s.kind = kind;
  s.step = 0;
  for (const auto* p : params) {
    s.first_moment.push_back(Tensor<float>::zeros(p->shape()));
    s.second_moment.push_back(Tensor<float>::zeros(p->shape()));
  }
  return s;
}

void optimizer_step(const OptimizerConfig& cfg, OptimizerState& state, double lr,
                    std::vector<Tensor<float>*>& params,
                    const std::vector<Tensor<float>>& grads) {
  state.step += 1;
  if (cfg.kind == OptimizerKind::Sgd) {
    for (std::size_t p = 0; p < params.size(); ++p) {
      float* w = params[p]->mutable_data();
      const float* g = grads[p].data();
      const std::int64_t n = params[p]->numel();
      const float step = static_cast<float>(lr);
      for (std::int64_t i = 0; i < n; ++i) w[i] -= step * g[i];
    }
    return;
  }
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  const float b1 = static_cast<float>(cfg.beta1);
  const float b2 = static_cast<float>(cfg.beta2);
  const float inv_bc1 = static_cast<float>(1.0 / bc1);
  const float inv_bc2 = static_cast<float>(1.0 / bc2);
  const float eps = static_cast<float>(cfg.eps);
  const float step = static_cast<float>(lr);
  for (std::size_t p = 0; p < params.size(); ++p) {
    float* w = params[p]->mutable_data();
    float* m = state.first_moment[p].mutable_data();
    float* v = state.second_moment[p].mutable_data();
    const float* g = grads[p].data();
    const std::int64_t n = params[p]->numel();
    for (std::int64_t i = 0; i < n; ++i) {
      m[i] = b1 * m[i] + (1.0f - b1) * g[i];
      v[i] = b2 * v[i] + (1.0f - b2) * g[i] * g[i];
      const float mhat = m[i] * inv_bc1;
      const float vhat = v[i] * inv_bc2;
      w[i] -= step * mhat / (std::sqrt(vhat) + eps);
    }
  }
}

struct ChunkOutput {
  std::vector<Tensor<float>> grads;  // per parameter, d(sum of chunk losses)/d(param)
  double nominal_sum = 0;
  double robust_sum = 0;
  double penalty_sum = 0;
};

}  // namespace

std::vector<int> epoch_shuffle(std::uint64_t seed, int epoch, int count) {
  std::vector<int> order(static_cast<std::size_t>(count));
  std::iota(order.begin(), order.end(), 0);
  auto rng = make_rng(seed, kShuffleTag, static_cast<std::uint64_t>(epoch));
  shuffle_indices(order, rng);
  return order;
}

std::string metrics_csv_header() {
  return "epoch,epsilon,kappa,train_total,train_nominal_ce,train_robust_ce,"
         "train_width_penalty,test_error,verified_test_error,width_sum,wall_time_s";
}

std::string metrics_csv_row(const EpochMetrics& m) {
  std::ostringstream os;
  os << m.epoch << "," << format_g(m.epsilon) << "," << format_g(m.kappa) << ","
     << format_g(m.train_total) << "," << format_g(m.train_nominal_ce) << ","
     << format_g(m.train_robust_ce) << "," << format_g(m.train_width_penalty) << ","
     << format_g(m.test_error) << "," << format_g(m.verified_test_error) << ","
     << format_g(m.width_sum) << "," << format_g(m.wall_time_s);
  return os.str();
}

TrainResult train(Network<float> net, const Dataset& train_data, const Dataset& test_data,
                  const TrainConfig& cfg, const OptimizerState* resume, std::ostream* log) {
  if (cfg.batch_size < 1) throw ValueError("train: batch_size must be positive");
  if (cfg.chunk_size < 1) throw ValueError("train: chunk_size must be positive");
  if (cfg.eps_schedule.end_value < 0 || cfg.eps_schedule.start_value < 0) {
    throw ValueError("train: epsilon schedule must be non-negative");
  }
  net.spec.validate();
  if (train_data.image_shape() !=
      std::array<int, 3>{net.spec.in_channels, net.spec.in_height, net.spec.in_width}) {
    throw ShapeError("train: dataset image shape does not match the network input shape");
  }

  auto params = parameter_list(net);
  OptimizerState state;
  if (resume) {
    if (resume->first_moment.size() != params.size()) {
      throw ValueError("train: resume optimizer state does not match the parameter count");
    }
    state = *resume;
    // buffers are mutated in place during training; detach from the caller's
    for (auto& t : state.first_moment) t = t.clone();
    for (auto& t : state.second_moment) t = t.clone();
  } else {
    state = fresh_state(params, cfg.optimizer.kind);
  }

  const int n = train_data.count();
  const int num_batches = (n + cfg.batch_size - 1) / cfg.batch_size;

  std::ofstream metrics_file;
  if (!cfg.out_dir.empty()) {
    std::filesystem::create_directories(cfg.out_dir);
    const auto path = std::filesystem::path(cfg.out_dir) / "metrics.csv";
    const bool append = cfg.start_epoch > 0 && std::filesystem::exists(path);
    metrics_file.open(path, append ? std::ios::app : std::ios::trunc);
    if (!metrics_file) throw DataError("train: cannot open metrics file " + path.string());
    if (!append) metrics_file << metrics_csv_header() << "\n";
  }

  EvalOptions eval_opts;
  eval_opts.batch_size = cfg.eval_batch;
  eval_opts.limit = cfg.eval_limit;
  eval_opts.threads = cfg.threads;
  eval_opts.input_clamp = cfg.input_clamp;

  TrainResult result;
  result.metrics.reserve(static_cast<std::size_t>(std::max(0, cfg.epochs - cfg.start_epoch)));

  const float lambda = static_cast<float>(cfg.penalty.lambda);

  for (int epoch = cfg.start_epoch; epoch < cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();

    double lr = cfg.optimizer.learning_rate;
    for (int m : cfg.optimizer.decay_milestones) {
      if (epoch >= m) lr *= cfg.optimizer.decay_factor;
    }

    std::vector<int> order = epoch_shuffle(cfg.seed, epoch, n);

    double epoch_total = 0, epoch_nominal = 0, epoch_robust = 0, epoch_penalty = 0;
    double cur_eps = 0, cur_kappa = 1;

    for (int b = 0; b < num_batches; ++b) {
      const int begin = b * cfg.batch_size;
      const int end = std::min(begin + cfg.batch_size, n);
      const int batch_count = end - begin;
      const double pos = epoch + static_cast<double>(b) / num_batches;
      cur_eps = cfg.eps_schedule.value(pos);
      cur_kappa = cfg.kappa_schedule.value(pos);
      const float eps_f = static_cast<float>(cur_eps);
      const float kappa_f = static_cast<float>(cur_kappa);

      std::vector<int> batch_idx(order.begin() + begin, order.begin() + end);
      Tensor<float> batch_images = gather_images(train_data, batch_idx);
      std::vector<int> batch_labels = gather_labels(train_data, batch_idx);
      if (cfg.augment) {
        const std::uint64_t aug_seed = hash_combine(
            hash_combine(hash_combine(cfg.seed, kAugmentTag), static_cast<std::uint64_t>(epoch)),
            static_cast<std::uint64_t>(b));
        batch_images = augment(batch_images, aug_seed, cfg.augment_translate, true);
      }

      // fixed-size chunks keep the gradient reduction order independent of
      // the thread count
      std::vector<std::pair<int, int>> chunks;
      for (int c = 0; c < batch_count; c += cfg.chunk_size) {
        chunks.emplace_back(c, std::min(c + cfg.chunk_size, batch_count));
      }
      std::vector<ChunkOutput> outputs(chunks.size());

      const bool interval_pass = !(cur_eps == 0.0 && cur_kappa == 1.0);
      const bool penalty_pass = interval_pass && cfg.loss == LossKind::ConstrainedIbp;

      parallel_chunks(static_cast<int>(chunks.size()), cfg.threads, [&](int ci) {
        const auto [cb, ce] = chunks[static_cast<std::size_t>(ci)];
        Tensor<float> imgs = slice_rows(batch_images, cb, ce);
        std::vector<int> lbls(batch_labels.begin() + cb, batch_labels.begin() + ce);
        const int chunk_count = ce - cb;

        Tape<float> tape;
        auto bound = net.bind(tape, true);
        Var<float> x = tape.constant(imgs);
        Var<float> logits = network_forward(net, tape, x, bound);
        Var<float> nominal_sum = sum(softmax_cross_entropy(logits, lbls));
        Var<float> robust_sum = nominal_sum;
        Var<float> penalty_sum;

        if (interval_pass) {
          std::optional<std::pair<float, float>> clamp;
          if (cfg.input_clamp) clamp = std::make_pair(0.0f, 1.0f);
          IntervalVar<float> z = interval_leaf(tape, input_interval(imgs, eps_f, clamp));
          auto bounds = network_forward_interval(net, tape, z, bound);
          robust_sum =
              sum(softmax_cross_entropy(worst_case_logits(bounds.back().bounds, lbls), lbls));
          if (penalty_pass) {
            int last_affine = -1;
            for (std::size_t i = 0; i < bounds.size(); ++i) {
              if (bounds[i].kind == LayerKind::Conv || bounds[i].kind == LayerKind::Dense) {
                last_affine = static_cast<int>(i);
              }
            }
            for (std::size_t i = 0; i < bounds.size(); ++i) {
              const auto& entry = bounds[i];
              if (entry.kind != LayerKind::Conv && entry.kind != LayerKind::Dense) continue;
              if (!cfg.penalty.include_final_layer && static_cast<int>(i) == last_affine) continue;
              Var<float> sq = square(interval_widths(entry.bounds));
              Var<float> term;
              if (cfg.penalty.reduction == PenaltyReduction::MeanPerLayer) {
                const float inv_features =
                    static_cast<float>(chunk_count) / static_cast<float>(sq.value().numel());
                term = scale(sum(sq), inv_features);  // per-example feature mean, summed
              } else {
                term = sum(sq);
              }
              penalty_sum = penalty_sum.defined() ? add(penalty_sum, term) : term;
            }
          }
        }

        Var<float> objective =
            add(scale(nominal_sum, kappa_f), scale(robust_sum, 1.0f - kappa_f));
        if (penalty_sum.defined()) objective = add(objective, scale(penalty_sum, lambda));
        tape.backward(objective);

        auto& out = outputs[static_cast<std::size_t>(ci)];
        auto vars = bound_list(bound);
        out.grads.reserve(vars.size());
        for (auto& v : vars) out.grads.push_back(v.grad());
        out.nominal_sum = static_cast<double>(nominal_sum.value().item());
        out.robust_sum = static_cast<double>(robust_sum.value().item());
        out.penalty_sum =
            penalty_sum.defined() ? static_cast<double>(penalty_sum.value().item()) : 0.0;
      });

      // order-stable reduction, then the batch mean
      std::vector<Tensor<float>> grads;
      grads.reserve(params.size());
      for (std::size_t p = 0; p < params.size(); ++p) {
        Tensor<float> g = outputs[0].grads[p].clone();
        for (std::size_t ci = 1; ci < outputs.size(); ++ci) {
          kernels::add_inplace(g, outputs[ci].grads[p]);
        }
        grads.push_back(kernels::scale(g, 1.0f / static_cast<float>(batch_count)));
      }

      double nominal_sum = 0, robust_sum = 0, penalty_sum = 0;
      for (const auto& out : outputs) {
        nominal_sum += out.nominal_sum;
        robust_sum += out.robust_sum;
        penalty_sum += out.penalty_sum;
      }
      const double batch_total = (cur_kappa * nominal_sum + (1.0 - cur_kappa) * robust_sum +
                                  cfg.penalty.lambda * penalty_sum) /
                                 batch_count;
      if (!std::isfinite(batch_total)) {
        std::ostringstream os;
        os << "train: non-finite loss at epoch " << epoch << ", batch " << b
           << " (epsilon=" << cur_eps << ", kappa=" << cur_kappa
           << ", nominal=" << nominal_sum / batch_count << ", robust=" << robust_sum / batch_count
           << ", penalty=" << penalty_sum / batch_count << ")";
        throw NumericError(os.str());
      }

      optimizer_step(cfg.optimizer, state, lr, params, grads);

      epoch_total += batch_total * batch_count;
      epoch_nominal += nominal_sum;
      epoch_robust += robust_sum;
      epoch_penalty += penalty_sum;
    }

    EpochMetrics m;
    m.epoch = epoch;
    m.epsilon = cur_eps;
    m.kappa = cur_kappa;
    m.train_total = epoch_total / n;
    m.train_nominal_ce = epoch_nominal / n;
    m.train_robust_ce = epoch_robust / n;
    m.train_width_penalty = epoch_penalty / n;
    m.test_error = nominal_error(net, test_data, eval_opts);
    m.verified_test_error =
        verified_error(net, test_data, cfg.epsilon_eval_value(), eval_opts);
    m.width_sum = width_sum_metric(net, test_data, cur_eps, eval_opts);
    m.wall_time_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.metrics.push_back(m);

    if (metrics_file.is_open()) {
      metrics_file << metrics_csv_row(m) << "\n";
      metrics_file.flush();
    }
    if (log) {
      *log << "epoch " << epoch << " eps=" << format_g(cur_eps) << " kappa=" << format_g(cur_kappa)
           << " total=" << format_g(m.train_total) << " test_err=" << format_g(m.test_error)
           << " verified=" << format_g(m.verified_test_error)
           << " width_sum=" << format_g(m.width_sum) << " (" << format_g(m.wall_time_s) << "s)\n";
    }

    if (!cfg.out_dir.empty()) {
      CheckpointMeta meta;
      meta.epoch = epoch;
      meta.epsilon = cur_eps;
      meta.kappa = cur_kappa;
      meta.seed = cfg.seed;
      const bool periodic = cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0;
      if (periodic) {
        char name[64];
        std::snprintf(name, sizeof name, "checkpoint_epoch_%04d.ibpc", epoch);
        save_checkpoint((std::filesystem::path(cfg.out_dir) / name).string(), net, meta, &state);
      }
      if (epoch == cfg.epochs - 1) {
        save_checkpoint((std::filesystem::path(cfg.out_dir) / "checkpoint_final.ibpc").string(),
                        net, meta, &state);
      }
    }
  }

  result.net = std::move(net);
  result.optimizer = std::move(state);
  return result;
}

EvalReport evaluate(const Network<float>& net, const Dataset& test, double epsilon,
                    const std::optional<AttackConfig>& attack, const EvalOptions& opts) {
  if (epsilon < 0) throw ValueError("evaluate: epsilon must be non-negative");
  EvalReport r;
  r.epsilon = epsilon;
  r.nominal = nominal_error(net, test, opts);
  r.verified = verified_error(net, test, epsilon, opts);
  if (attack) {
    AttackConfig cfg = *attack;
    cfg.epsilon = epsilon;
    r.pgd = pgd_error(net, test, cfg, opts);
    r.pgd_run = true;
  }
  return r;
}

}  // namespace ibp
