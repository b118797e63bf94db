#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "ibp/attack.hpp"
#include "ibp/checkpoint.hpp"
#include "ibp/data.hpp"
#include "ibp/interval.hpp"
#include "ibp/network.hpp"
#include "ibp/parallel.hpp"
#include "ibp/trainer.hpp"

namespace {

constexpr const char* kVersion = "ibptrain 0.1.0";

// exit codes: 0 ok, 2 usage/argument, 3 data/file, 4 numeric failure, 1 other
constexpr int kUsageError = 2;
constexpr int kDataError = 3;
constexpr int kNumericError = 4;

struct DatasetOptions {
  std::string dataset = "synthetic";
  std::string data_dir;
  int train_count = 0;  // 0 = dataset default / full split
  int test_count = 0;
  bool normalize = true;  // per-channel stats, CIFAR-10 only by default
};

std::pair<ibp::Dataset, ibp::Dataset> load_datasets(const DatasetOptions& opts) {
  // synthetic data is generated with fixed seeds so every run sees the same
  // bundled dataset
  if (opts.dataset == "synthetic") {
    const int train_n = opts.train_count > 0 ? opts.train_count : 512;
    const int test_n = opts.test_count > 0 ? opts.test_count : 256;
    return {ibp::make_synthetic("train", train_n, 1234),
            ibp::make_synthetic("test", test_n, 1234)};
  }
  if (opts.dataset == "synthetic-digits") {
    const int train_n = opts.train_count > 0 ? opts.train_count : 2048;
    const int test_n = opts.test_count > 0 ? opts.test_count : 512;
    return {ibp::make_synthetic_digits("train", train_n, 1234),
            ibp::make_synthetic_digits("test", test_n, 1234)};
  }
  if (opts.data_dir.empty()) {
    throw ibp::ValueError("--data-dir is required for dataset '" + opts.dataset + "'");
  }
  std::pair<ibp::Dataset, ibp::Dataset> splits;
  if (opts.dataset == "mnist") {
    splits = ibp::load_mnist(opts.data_dir);
  } else if (opts.dataset == "cifar10") {
    splits = ibp::load_cifar10(opts.data_dir);
  } else {
    throw ibp::ValueError("unknown dataset '" + opts.dataset +
                          "' (valid: mnist, cifar10, synthetic, synthetic-digits)");
  }
  if (opts.train_count > 0) splits.first = splits.first.take(opts.train_count);
  if (opts.test_count > 0) splits.second = splits.second.take(opts.test_count);
  return splits;
}

void add_dataset_flags(CLI::App* cmd, DatasetOptions& opts) {
  cmd->add_option("--dataset", opts.dataset,
                  "Dataset: mnist, cifar10, synthetic, synthetic-digits")
      ->capture_default_str();
  cmd->add_option("--data-dir", opts.data_dir, "Directory with the dataset files");
  cmd->add_option("--train-count", opts.train_count,
                  "Use only the first N training examples (0 = all)");
  cmd->add_option("--test-count", opts.test_count, "Use only the first N test examples (0 = all)");
}

std::vector<int> parse_int_list(const std::string& s) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(std::stoi(item));
  }
  return out;
}

std::string format_g(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  return buf;
}

int run_train(CLI::App& app);
int run_eval(CLI::App& app);
int run_demo(CLI::App& app);

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Certified robust training with interval bound propagation"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);

  // ---- train -----------------------------------------------------------
  auto* train_cmd = app.add_subcommand("train", "Train a classifier with the IBP or "
                                                "constrained-IBP objective");
  train_cmd->set_config("--config", "", "Optional key=value config file; flags override it");
  train_cmd->allow_config_extras(true);

  DatasetOptions tr_data;
  add_dataset_flags(train_cmd, tr_data);
  std::string arch = "small";
  std::string loss = "ibp";
  double epsilon = 0.4;
  double epsilon_eval = -1;
  double lambda = 1.0;
  std::string penalty_reduction = "mean";
  bool penalty_exclude_final = false;
  double warmup_epochs = -1;
  double ramp_epochs = -1;
  double ramp_speedup = 1.0;
  double kappa_end = 0.5;
  int epochs = 25;
  int batch_size = 100;
  std::uint64_t seed = 0;
  std::string out_dir;
  std::string optimizer = "adam";
  double lr = 1e-3;
  std::string lr_milestones;
  double lr_decay = 0.1;
  std::string augment = "auto";
  bool no_input_clamp = false;
  bool no_normalize = false;
  int threads = 0;
  int eval_limit = 0;
  int checkpoint_every = 0;
  int chunk_size = 32;
  std::string resume;

  train_cmd->add_option("--arch", arch, "Architecture preset: small, medium, large")
      ->capture_default_str();
  train_cmd->add_option("--loss", loss, "Objective: ibp or constrained-ibp")
      ->capture_default_str();
  train_cmd->add_option("--epsilon", epsilon, "Target training perturbation radius")
      ->capture_default_str();
  train_cmd->add_option("--epsilon-eval", epsilon_eval,
                        "Verification radius for per-epoch metrics (default: --epsilon)");
  train_cmd->add_option("--lambda", lambda, "Width penalty weight")->capture_default_str();
  train_cmd->add_option("--penalty-reduction", penalty_reduction,
                        "Width penalty reduction per layer: mean or sum")
      ->capture_default_str();
  train_cmd->add_flag("--penalty-exclude-final", penalty_exclude_final,
                      "Exclude the logits layer from the width penalty");
  train_cmd->add_option("--warmup-epochs", warmup_epochs,
                        "Epochs at epsilon=0, kappa=1 (default: 3, or 10 for cifar10)");
  train_cmd->add_option("--ramp-epochs", ramp_epochs,
                        "Base ramp length in epochs (default: 15, or 150 for cifar10)");
  train_cmd->add_option("--ramp-speedup", ramp_speedup,
                        "Divide the epsilon ramp length by this factor (e.g. 2.5)")
      ->capture_default_str();
  train_cmd->add_option("--kappa-end", kappa_end, "Final nominal/robust trade-off weight")
      ->capture_default_str();
  train_cmd->add_option("--epochs", epochs, "Total training epochs")->capture_default_str();
  train_cmd->add_option("--batch-size", batch_size, "Minibatch size")->capture_default_str();
  train_cmd->add_option("--seed", seed, "Master seed")->capture_default_str();
  train_cmd->add_option("--out", out_dir, "Output directory for metrics, checkpoints, manifest")
      ->required();
  train_cmd->add_option("--optimizer", optimizer, "adam or sgd")->capture_default_str();
  train_cmd->add_option("--lr", lr, "Learning rate")->capture_default_str();
  train_cmd->add_option("--lr-milestones", lr_milestones,
                        "Comma-separated epochs at which the learning rate decays");
  train_cmd->add_option("--lr-decay", lr_decay, "Learning-rate decay factor at each milestone")
      ->capture_default_str();
  train_cmd->add_option("--augment", augment, "Data augmentation: auto, on, off")
      ->capture_default_str();
  train_cmd->add_flag("--no-clamp", no_input_clamp,
                      "Do not clamp input intervals to the [0,1] pixel range");
  train_cmd->add_flag("--no-normalize", no_normalize,
                      "Skip per-channel input normalization (cifar10 default uses it)");
  train_cmd->add_option("--threads", threads, "Worker threads (0 = all cores)");
  train_cmd->add_option("--eval-limit", eval_limit,
                        "Cap test examples used for per-epoch metrics (0 = all)");
  train_cmd->add_option("--checkpoint-every", checkpoint_every,
                        "Write a checkpoint every N epochs (0 = final only)");
  train_cmd->add_option("--chunk-size", chunk_size, "Gradient chunk size")->capture_default_str();
  train_cmd->add_option("--resume", resume, "Checkpoint to resume from");

  // ---- eval ------------------------------------------------------------
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint: test error, verified "
                                              "error, optional PGD error");
  DatasetOptions ev_data;
  add_dataset_flags(eval_cmd, ev_data);
  std::string checkpoint_path;
  double eval_epsilon = 0.4;
  bool run_pgd = false;
  int pgd_iters = 200;
  int pgd_restarts = 10;
  double pgd_step = -1;
  std::uint64_t eval_seed = 0;
  int eval_threads = 0;
  int limit = 0;
  std::string report_path;
  eval_cmd->add_option("--checkpoint", checkpoint_path, "Checkpoint file")->required();
  eval_cmd->add_option("--epsilon", eval_epsilon, "Verification / attack radius")
      ->capture_default_str();
  eval_cmd->add_flag("--pgd", run_pgd, "Also run the PGD attack (slow)");
  eval_cmd->add_option("--pgd-iters", pgd_iters, "PGD iterations")->capture_default_str();
  eval_cmd->add_option("--pgd-restarts", pgd_restarts, "PGD random restarts")
      ->capture_default_str();
  eval_cmd->add_option("--pgd-step", pgd_step, "PGD step size (default epsilon/8)");
  eval_cmd->add_option("--seed", eval_seed, "Attack seed")->capture_default_str();
  eval_cmd->add_option("--threads", eval_threads, "Worker threads (0 = all cores)");
  eval_cmd->add_option("--limit", limit, "Evaluate only the first N test examples (0 = all)");
  eval_cmd->add_option("--report", report_path, "Also write the report to this file");

  // ---- demo-wrapping -----------------------------------------------------
  auto* demo_cmd = app.add_subcommand("demo-wrapping",
                                      "Show interval blow-up under repeated 45-degree rotations");
  int demo_steps = 10;
  demo_cmd->add_option("--steps", demo_steps, "Number of rotations")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kUsageError;
  }

  try {
    if (train_cmd->parsed()) {
      // dataset-dependent defaults
      const bool is_cifar = tr_data.dataset == "cifar10";
      if (warmup_epochs < 0) warmup_epochs = is_cifar ? 10 : 3;
      if (ramp_epochs < 0) ramp_epochs = is_cifar ? 150 : 15;
      bool do_augment = augment == "on" || (augment == "auto" && is_cifar);
      if (augment != "on" && augment != "off" && augment != "auto") {
        throw ibp::ValueError("--augment must be auto, on, or off");
      }
      if (threads <= 0) threads = ibp::hardware_threads();

      auto [train_split, test_split] = load_datasets(tr_data);

      ibp::TrainConfig cfg;
      if (loss == "ibp") {
        cfg.loss = ibp::LossKind::Ibp;
      } else if (loss == "constrained-ibp") {
        cfg.loss = ibp::LossKind::ConstrainedIbp;
      } else {
        throw ibp::ValueError("--loss must be ibp or constrained-ibp");
      }
      cfg.penalty.lambda = lambda;
      if (penalty_reduction == "mean") {
        cfg.penalty.reduction = ibp::PenaltyReduction::MeanPerLayer;
      } else if (penalty_reduction == "sum") {
        cfg.penalty.reduction = ibp::PenaltyReduction::SumPerLayer;
      } else {
        throw ibp::ValueError("--penalty-reduction must be mean or sum");
      }
      cfg.penalty.include_final_layer = !penalty_exclude_final;
      cfg.eps_schedule = ibp::Schedule::ramp(0, epsilon, warmup_epochs, ramp_epochs / ramp_speedup);
      cfg.kappa_schedule = ibp::Schedule::ramp(1.0, kappa_end, warmup_epochs, ramp_epochs);
      if (optimizer == "adam") {
        cfg.optimizer.kind = ibp::OptimizerKind::Adam;
      } else if (optimizer == "sgd") {
        cfg.optimizer.kind = ibp::OptimizerKind::Sgd;
      } else {
        throw ibp::ValueError("--optimizer must be adam or sgd");
      }
      cfg.optimizer.learning_rate = lr;
      cfg.optimizer.decay_milestones = parse_int_list(lr_milestones);
      cfg.optimizer.decay_factor = lr_decay;
      cfg.epochs = epochs;
      cfg.batch_size = batch_size;
      cfg.seed = seed;
      cfg.augment = do_augment;
      cfg.epsilon_eval = epsilon_eval;
      cfg.input_clamp = !no_input_clamp;
      cfg.eval_limit = eval_limit;
      cfg.threads = threads;
      cfg.chunk_size = chunk_size;
      cfg.checkpoint_every = checkpoint_every;
      cfg.out_dir = out_dir;

      ibp::Normalization<float> norm;
      if (is_cifar && !no_normalize) {
        auto [mean, stddev] = ibp::normalization_stats(train_split);
        norm.mean = mean;
        norm.std_dev = stddev;
      }

      const auto shape = train_split.image_shape();
      ibp::NetworkSpec spec =
          ibp::preset(arch, {shape[0], shape[1], shape[2]}, train_split.num_classes);

      ibp::Network<float> net;
      std::optional<ibp::OptimizerState> resume_state;
      if (!resume.empty()) {
        ibp::Checkpoint ckpt = ibp::load_checkpoint(resume);
        if (ckpt.net.spec.to_text() != spec.to_text()) {
          throw ibp::DataError("--resume checkpoint architecture does not match --arch");
        }
        net = std::move(ckpt.net);
        if (!ckpt.optimizer) {
          throw ibp::DataError("--resume checkpoint has no optimizer state");
        }
        resume_state = std::move(ckpt.optimizer);
        cfg.start_epoch = ckpt.meta.epoch + 1;
        std::cerr << "resuming from epoch " << cfg.start_epoch << "\n";
      } else {
        net = ibp::init_network<float>(spec, seed, norm);
      }

      // run manifest: the resolved configuration, reusable as --config
      std::filesystem::create_directories(out_dir);
      {
        std::ofstream mf(std::filesystem::path(out_dir) / "run_manifest.txt");
        mf << "# " << kVersion << " run manifest; pass as --config to reproduce\n";
        mf << "dataset=" << tr_data.dataset << "\n";
        if (!tr_data.data_dir.empty()) mf << "data-dir=" << tr_data.data_dir << "\n";
        if (tr_data.train_count > 0) mf << "train-count=" << tr_data.train_count << "\n";
        if (tr_data.test_count > 0) mf << "test-count=" << tr_data.test_count << "\n";
        mf << "arch=" << arch << "\n";
        mf << "loss=" << loss << "\n";
        mf << "epsilon=" << format_g(epsilon) << "\n";
        mf << "epsilon-eval=" << format_g(cfg.epsilon_eval_value()) << "\n";
        mf << "lambda=" << format_g(lambda) << "\n";
        mf << "penalty-reduction=" << penalty_reduction << "\n";
        if (penalty_exclude_final) mf << "penalty-exclude-final=true\n";
        mf << "warmup-epochs=" << format_g(warmup_epochs) << "\n";
        mf << "ramp-epochs=" << format_g(ramp_epochs) << "\n";
        mf << "ramp-speedup=" << format_g(ramp_speedup) << "\n";
        mf << "kappa-end=" << format_g(kappa_end) << "\n";
        mf << "epochs=" << epochs << "\n";
        mf << "batch-size=" << batch_size << "\n";
        mf << "seed=" << seed << "\n";
        mf << "optimizer=" << optimizer << "\n";
        mf << "lr=" << format_g(lr) << "\n";
        if (!lr_milestones.empty()) mf << "lr-milestones=" << lr_milestones << "\n";
        mf << "lr-decay=" << format_g(lr_decay) << "\n";
        mf << "augment=" << (do_augment ? "on" : "off") << "\n";
        if (no_input_clamp) mf << "no-clamp=true\n";
        if (no_normalize) mf << "no-normalize=true\n";
        mf << "chunk-size=" << chunk_size << "\n";
        mf << "eval-limit=" << eval_limit << "\n";
        mf << "checkpoint-every=" << checkpoint_every << "\n";
        mf << "# dataset_hash_train=" << std::hex << ibp::dataset_content_hash(train_split)
           << "\n";
        mf << "# dataset_hash_test=" << ibp::dataset_content_hash(test_split) << std::dec << "\n";
      }

      ibp::TrainResult result =
          train(std::move(net), train_split, test_split, cfg,
                resume_state ? &*resume_state : nullptr, &std::cerr);
      std::cerr << "done; metrics and checkpoints in " << out_dir << "\n";
      return 0;
    }

    if (eval_cmd->parsed()) {
      if (eval_threads <= 0) eval_threads = ibp::hardware_threads();
      ibp::Checkpoint ckpt = ibp::load_checkpoint(checkpoint_path);
      auto [train_split, test_split] = load_datasets(ev_data);
      const auto shape = test_split.image_shape();
      if (shape != std::array<int, 3>{ckpt.net.spec.in_channels, ckpt.net.spec.in_height,
                                      ckpt.net.spec.in_width}) {
        throw ibp::DataError("checkpoint input shape does not match dataset '" +
                             ev_data.dataset + "'");
      }
      ibp::EvalOptions opts;
      opts.threads = eval_threads;
      opts.limit = limit;
      std::optional<ibp::AttackConfig> attack;
      if (run_pgd) {
        ibp::AttackConfig a;
        a.iterations = pgd_iters;
        a.restarts = pgd_restarts;
        a.step_size = pgd_step;
        a.seed = eval_seed;
        attack = a;
      }
      ibp::EvalReport report = ibp::evaluate(ckpt.net, test_split, eval_epsilon, attack, opts);

      std::ostringstream os;
      os << "epsilon=" << format_g(report.epsilon) << "\n";
      os << "test_error=" << format_g(report.nominal) << "\n";
      if (report.pgd_run) os << "pgd_error=" << format_g(report.pgd) << "\n";
      os << "verified_error=" << format_g(report.verified) << "\n";
      std::cout << os.str();
      if (!report_path.empty()) {
        std::ofstream rf(report_path);
        rf << os.str();
        if (!rf) throw ibp::DataError("cannot write report to " + report_path);
      }
      return 0;
    }

    if (demo_cmd->parsed()) {
      auto steps = ibp::wrapping_demo(demo_steps);
      std::printf("%-6s %-16s %-14s %-16s\n", "step", "interval_hw", "growth", "true_set_hw");
      for (const auto& s : steps) {
        std::printf("%-6d %-16.9f %-14.9f %-16.9f\n", s.step, s.half_width, s.growth_factor,
                    s.exact_half_width);
      }
      std::printf("interval half-width grows by sqrt(2)=%.9f per 45-degree rotation;\n"
                  "the true rotated square only alternates between width 1 and sqrt(2)\n"
                  "(after two rotations the set is the original box again, the interval is 2x).\n",
                  std::sqrt(2.0));
      return 0;
    }
  } catch (const ibp::NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return kNumericError;
  } catch (const ibp::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kDataError;
  } catch (const ibp::ValueError& e) {
    std::cerr << "invalid arguments: " << e.what() << "\n";
    return kUsageError;
  } catch (const ibp::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
