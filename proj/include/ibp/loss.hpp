#pragma once

#include <string>
#include <vector>

#include "ibp/data.hpp"
#include "ibp/interval.hpp"
#include "ibp/network.hpp"
#include "ibp/tape.hpp"

namespace ibp {

struct LossBreakdown {
  double nominal_ce = 0;
  double robust_ce = 0;
  double width_penalty = 0;
  double total = 0;
  double kappa = 1;
  double epsilon = 0;
};

enum class PenaltyReduction {
  MeanPerLayer,  // sum over layers of the mean squared width per layer
  SumPerLayer,   // sum over layers of the summed squared widths (the literal norm)
};

struct PenaltyOptions {
  PenaltyReduction reduction = PenaltyReduction::MeanPerLayer;
  bool include_final_layer = true;  // penalize the logits layer bounds too
  double lambda = 1.0;
};

// Worst-case logit vector: the true class at its lower bound, every other
// class at its upper bound.
template <typename T>
Var<T> worst_case_logits(IntervalVar<T> logit_bounds, const std::vector<int>& labels) {
  Tape<T>& tape = *logit_bounds.lower.tape;
  const auto& shape = logit_bounds.lower.value().shape();
  if (shape.size() != 2) {
    throw ShapeError("worst_case_logits: expected [batch, classes] bounds, got " +
                     shape_to_string(shape));
  }
  Var<T> hot = tape.constant(kernels::onehot<T>(labels, shape[1]));
  return add(logit_bounds.upper, mul(hot, sub(logit_bounds.lower, logit_bounds.upper)));
}

template <typename T>
Tensor<T> worst_case_logits(const IntervalTensor<T>& logit_bounds, int y_true) {
  if (logit_bounds.lower.rank() != 1) {
    throw ShapeError("worst_case_logits: expected a logit vector, got " +
                     shape_to_string(logit_bounds.lower.shape()));
  }
  Tape<T> tape;
  const int n = logit_bounds.lower.dim(0);
  IntervalVar<T> z = interval_leaf(
      tape, IntervalTensor<T>{logit_bounds.lower.reshape({1, n}), logit_bounds.upper.reshape({1, n})});
  return worst_case_logits(z, std::vector<int>{y_true}).value().reshape({n});
}

template <typename T>
struct LossVars {
  Var<T> total, nominal_ce, robust_ce, width_penalty;

  LossBreakdown breakdown(double kappa, double epsilon) const {
    LossBreakdown b;
    b.nominal_ce = static_cast<double>(nominal_ce.value().item());
    b.robust_ce = static_cast<double>(robust_ce.value().item());
    b.width_penalty = width_penalty.defined()
                          ? static_cast<double>(width_penalty.value().item())
                          : 0.0;
    b.total = static_cast<double>(total.value().item());
    b.kappa = kappa;
    b.epsilon = epsilon;
    return b;
  }
};

// kappa * CE(logits) + (1 - kappa) * CE(worst-case logits); batch mean.
template <typename T>
LossVars<T> ibp_loss(Var<T> logits, IntervalVar<T> logit_bounds, const std::vector<int>& labels,
                     T kappa) {
  if (!(kappa >= T(0) && kappa <= T(1))) {
    throw ValueError("ibp_loss: kappa must lie in [0,1], got " + std::to_string(kappa));
  }
  Var<T> nominal = mean(softmax_cross_entropy(logits, labels));
  Var<T> robust = mean(softmax_cross_entropy(worst_case_logits(logit_bounds, labels), labels));
  Var<T> total = add(scale(nominal, kappa), scale(robust, T(1) - kappa));
  return LossVars<T>{total, nominal, robust, Var<T>{}};
}

// Interval-width penalty over the recorded per-layer bounds; post-affine
// bounds only (relu never widens them).
template <typename T>
Var<T> width_penalty_term(Tape<T>& tape, const std::vector<LayerBounds<T>>& bounds,
                          const PenaltyOptions& opts) {
  int last_affine = -1;
  for (std::size_t i = 0; i < bounds.size(); ++i) {
    if (bounds[i].kind == LayerKind::Conv || bounds[i].kind == LayerKind::Dense) {
      last_affine = static_cast<int>(i);
    }
  }
  Var<T> penalty = tape.constant(Tensor<T>::scalar(T(0)));
  const int batch = bounds.empty() ? 1 : bounds.front().bounds.lower.value().dim(0);
  for (std::size_t i = 0; i < bounds.size(); ++i) {
    const auto& entry = bounds[i];
    if (entry.kind != LayerKind::Conv && entry.kind != LayerKind::Dense) continue;
    if (!opts.include_final_layer && static_cast<int>(i) == last_affine) continue;
    Var<T> sq = square(interval_widths(entry.bounds));
    Var<T> layer_term;
    if (opts.reduction == PenaltyReduction::MeanPerLayer) {
      layer_term = mean(sq);
    } else {
      // per-example sum of squares, averaged over the batch
      layer_term = scale(sum(sq), T(1) / static_cast<T>(batch));
    }
    penalty = add(penalty, layer_term);
  }
  return penalty;
}

// IBP loss plus lambda times the width penalty.
template <typename T>
LossVars<T> constrained_ibp_loss(Var<T> logits, const std::vector<LayerBounds<T>>& bounds,
                                 const std::vector<int>& labels, T kappa,
                                 const PenaltyOptions& opts) {
  if (bounds.empty()) throw ValueError("constrained_ibp_loss: no layer bounds supplied");
  if (!(opts.lambda >= 0)) {
    throw ValueError("constrained_ibp_loss: lambda must be non-negative, got " +
                     std::to_string(opts.lambda));
  }
  Tape<T>& tape = *logits.tape;
  LossVars<T> vars = ibp_loss(logits, bounds.back().bounds, labels, kappa);
  vars.width_penalty = width_penalty_term(tape, bounds, opts);
  vars.total = add(vars.total, scale(vars.width_penalty, static_cast<T>(opts.lambda)));
  return vars;
}

// ---- single-example conveniences ---------------------------------------------

// -log softmax(logits)[y]; the spec-level scalar form.
template <typename T>
T softmax_cross_entropy_value(const Tensor<T>& logits, int y_true) {
  if (logits.rank() != 1) {
    throw ShapeError("softmax_cross_entropy: expected a logit vector, got " +
                     shape_to_string(logits.shape()));
  }
  auto result =
      kernels::softmax_xent(logits.reshape({1, logits.dim(0)}), std::vector<int>{y_true});
  return result.first.item();
}

// ---- dataset metrics ----------------------------------------------------------

struct EvalOptions {
  int batch_size = 256;
  int limit = 0;  // 0 = whole split
  int threads = 1;
  bool input_clamp = true;  // intersect input intervals with [0,1]
};

// Index of the strictly greatest entry, or -1 when the max is tied.
int strict_argmax(const float* row, int n);

// Fraction of examples whose argmax is not the label (ties count as errors).
double nominal_error(const Network<float>& net, const Dataset& data, const EvalOptions& opts = {});

// Fraction of examples that cannot be certified at radius epsilon: certified
// means the worst-case logits still rank the true class strictly first.
double verified_error(const Network<float>& net, const Dataset& data, double epsilon,
                      const EvalOptions& opts = {});

// Sum over post-affine layers of the mean squared interval width at radius
// epsilon (the quantity the width penalty drives down).
double width_sum_metric(const Network<float>& net, const Dataset& data, double epsilon,
                        const EvalOptions& opts = {});

}  // namespace ibp
