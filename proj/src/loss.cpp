#include "ibp/loss.hpp"

#include <algorithm>
#include <numeric>

#include "ibp/parallel.hpp"

namespace ibp {

int strict_argmax(const float* row, int n) {
  int best = 0;
  bool tie = false;
  for (int j = 1; j < n; ++j) {
    if (row[j] > row[best]) {
      best = j;
      tie = false;
    } else if (row[j] == row[best]) {
      tie = true;
    }
  }
  return tie ? -1 : best;
}

namespace {

struct ChunkPlan {
  int begin, end;
};

std::vector<ChunkPlan> plan_chunks(int n, int batch_size) {
  std::vector<ChunkPlan> chunks;
  for (int b = 0; b < n; b += batch_size) {
    chunks.push_back(ChunkPlan{b, std::min(b + batch_size, n)});
  }
  return chunks;
}

std::vector<int> iota_range(int begin, int end) {
  std::vector<int> idx(static_cast<std::size_t>(end - begin));
  std::iota(idx.begin(), idx.end(), begin);
  return idx;
}

int effective_count(const Dataset& data, const EvalOptions& opts) {
  const int n = data.count();
  return opts.limit > 0 ? std::min(n, opts.limit) : n;
}

}  // namespace

double nominal_error(const Network<float>& net, const Dataset& data, const EvalOptions& opts) {
  const int n = effective_count(data, opts);
  if (n == 0) return 0.0;
  auto chunks = plan_chunks(n, opts.batch_size);
  std::vector<int> errors(chunks.size(), 0);
  parallel_chunks(static_cast<int>(chunks.size()), opts.threads, [&](int ci) {
    const auto [begin, end] = chunks[static_cast<std::size_t>(ci)];
    const auto idx = iota_range(begin, end);
    Tape<float> tape;
    auto params = net.bind(tape, false);
    Var<float> logits =
        network_forward(net, tape, tape.constant(gather_images(data, idx)), params);
    const Tensor<float>& lv = logits.value();
    const int classes = lv.dim(1);
    int bad = 0;
    for (int i = 0; i < end - begin; ++i) {
      const int pred = strict_argmax(lv.data() + static_cast<std::int64_t>(i) * classes, classes);
      if (pred != data.labels[static_cast<std::size_t>(begin + i)]) ++bad;
    }
    errors[static_cast<std::size_t>(ci)] = bad;
  });
  const int total = std::accumulate(errors.begin(), errors.end(), 0);
  return static_cast<double>(total) / n;
}

double verified_error(const Network<float>& net, const Dataset& data, double epsilon,
                      const EvalOptions& opts) {
  if (epsilon < 0) throw ValueError("verified_error: epsilon must be non-negative");
  const int n = effective_count(data, opts);
  if (n == 0) return 0.0;
  auto chunks = plan_chunks(n, opts.batch_size);
  std::vector<int> errors(chunks.size(), 0);
  parallel_chunks(static_cast<int>(chunks.size()), opts.threads, [&](int ci) {
    const auto [begin, end] = chunks[static_cast<std::size_t>(ci)];
    const auto idx = iota_range(begin, end);
    Tape<float> tape;
    auto params = net.bind(tape, false);
    std::optional<std::pair<float, float>> clamp;
    if (opts.input_clamp) clamp = std::make_pair(0.0f, 1.0f);
    IntervalVar<float> z = interval_leaf(
        tape, input_interval(gather_images(data, idx), static_cast<float>(epsilon), clamp));
    auto bounds = network_forward_interval(net, tape, z, params);
    const Tensor<float>& lo = bounds.back().bounds.lower.value();
    const Tensor<float>& hi = bounds.back().bounds.upper.value();
    const int classes = lo.dim(1);
    std::vector<float> wc(static_cast<std::size_t>(classes));
    int bad = 0;
    for (int i = 0; i < end - begin; ++i) {
      const int y = data.labels[static_cast<std::size_t>(begin + i)];
      const float* lrow = lo.data() + static_cast<std::int64_t>(i) * classes;
      const float* hrow = hi.data() + static_cast<std::int64_t>(i) * classes;
      for (int j = 0; j < classes; ++j) wc[static_cast<std::size_t>(j)] = j == y ? lrow[j] : hrow[j];
      if (strict_argmax(wc.data(), classes) != y) ++bad;  // ties are errors
    }
    errors[static_cast<std::size_t>(ci)] = bad;
  });
  const int total = std::accumulate(errors.begin(), errors.end(), 0);
  return static_cast<double>(total) / n;
}

double width_sum_metric(const Network<float>& net, const Dataset& data, double epsilon,
                        const EvalOptions& opts) {
  if (epsilon < 0) throw ValueError("width_sum_metric: epsilon must be non-negative");
  const int n = effective_count(data, opts);
  if (n == 0) return 0.0;
  auto chunks = plan_chunks(n, opts.batch_size);
  // per-chunk, per-layer sums of squared widths; reduced in chunk order
  std::vector<std::vector<double>> sums(chunks.size());
  std::vector<std::vector<std::int64_t>> counts(chunks.size());
  parallel_chunks(static_cast<int>(chunks.size()), opts.threads, [&](int ci) {
    const auto [begin, end] = chunks[static_cast<std::size_t>(ci)];
    const auto idx = iota_range(begin, end);
    Tape<float> tape;
    auto params = net.bind(tape, false);
    std::optional<std::pair<float, float>> clamp;
    if (opts.input_clamp) clamp = std::make_pair(0.0f, 1.0f);
    IntervalVar<float> z = interval_leaf(
        tape, input_interval(gather_images(data, idx), static_cast<float>(epsilon), clamp));
    auto bounds = network_forward_interval(net, tape, z, params);
    auto& s = sums[static_cast<std::size_t>(ci)];
    auto& c = counts[static_cast<std::size_t>(ci)];
    for (const auto& entry : bounds) {
      if (entry.kind != LayerKind::Conv && entry.kind != LayerKind::Dense) continue;
      const Tensor<float>& lo = entry.bounds.lower.value();
      const Tensor<float>& hi = entry.bounds.upper.value();
      double acc = 0;
      const std::int64_t m = lo.numel();
      for (std::int64_t i = 0; i < m; ++i) {
        const double w = static_cast<double>(hi.data()[i]) - lo.data()[i];
        acc += w * w;
      }
      s.push_back(acc);
      c.push_back(m);
    }
  });
  std::vector<double> layer_sums;
  std::vector<std::int64_t> layer_counts;
  for (std::size_t ci = 0; ci < chunks.size(); ++ci) {
    if (layer_sums.empty()) {
      layer_sums.assign(sums[ci].size(), 0.0);
      layer_counts.assign(sums[ci].size(), 0);
    }
    for (std::size_t k = 0; k < sums[ci].size(); ++k) {
      layer_sums[k] += sums[ci][k];
      layer_counts[k] += counts[ci][k];
    }
  }
  double metric = 0;
  for (std::size_t k = 0; k < layer_sums.size(); ++k) {
    metric += layer_sums[k] / static_cast<double>(layer_counts[k]);
  }
  return metric;
}

}  // namespace ibp
