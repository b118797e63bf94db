#pragma once

#include <cmath>
#include <map>
#include <optional>
#include <type_traits>
#include <string>
#include <utility>
#include <vector>

#include "ibp/tape.hpp"
#include "ibp/tensor.hpp"

namespace ibp {

// Axis-aligned box [lower, upper]; the public interval representation.
template <typename T>
struct IntervalTensor {
  Tensor<T> lower, upper;

  static IntervalTensor make(Tensor<T> lower, Tensor<T> upper) {
    require_same_shape(lower.shape(), upper.shape(), "interval");
    const T* lo = lower.data();
    const T* hi = upper.data();
    const std::int64_t n = lower.numel();
    for (std::int64_t i = 0; i < n; ++i) {
      if (!(lo[i] <= hi[i])) {
        throw ValueError("interval: lower > upper at flat index " + std::to_string(i));
      }
    }
    return IntervalTensor{std::move(lower), std::move(upper)};
  }
};

// Center/half-width form; used inside affine propagation only.
template <typename T>
struct CenterRadius {
  Tensor<T> center, radius;
};

template <typename T>
CenterRadius<T> to_center_radius(const IntervalTensor<T>& z) {
  return CenterRadius<T>{kernels::scale(kernels::add(z.upper, z.lower), T(0.5)),
                         kernels::scale(kernels::sub(z.upper, z.lower), T(0.5))};
}

template <typename T>
IntervalTensor<T> from_center_radius(const CenterRadius<T>& cr) {
  return IntervalTensor<T>{kernels::sub(cr.center, cr.radius),
                           kernels::add(cr.center, cr.radius)};
}

// The perturbation hyper-cube around x: [x - eps, x + eps], optionally
// intersected with the valid value range (pixel units, before any
// normalization layer).
template <typename T>
IntervalTensor<T> input_interval(const Tensor<T>& x, std::type_identity_t<T> epsilon,
                                 std::type_identity_t<std::optional<std::pair<T, T>>> clamp =
                                     std::nullopt) {
  if (!(epsilon >= T(0))) {
    throw ValueError("input_interval: epsilon must be non-negative, got " +
                     std::to_string(epsilon));
  }
  Tensor<T> lower = kernels::add_scalar(x, -epsilon);
  Tensor<T> upper = kernels::add_scalar(x, epsilon);
  if (clamp) {
    lower = kernels::clamp(lower, clamp->first, clamp->second);
    upper = kernels::clamp(upper, clamp->first, clamp->second);
  }
  return IntervalTensor<T>::make(std::move(lower), std::move(upper));
}

// Interval value recorded on a tape; gradients flow through both bounds.
template <typename T>
struct IntervalVar {
  Var<T> lower, upper;
};

template <typename T>
IntervalVar<T> interval_leaf(Tape<T>& tape, const IntervalTensor<T>& z,
                             bool requires_grad = false) {
  return IntervalVar<T>{tape.leaf(z.lower, requires_grad), tape.leaf(z.upper, requires_grad)};
}

template <typename T>
IntervalTensor<T> interval_value(const IntervalVar<T>& z) {
  return IntervalTensor<T>{z.lower.value(), z.upper.value()};
}

// W z + b on a box, via the center/half-width form:
//   center' = W center + b,  radius' = |W| radius.
// z is a vector [n] or a batch [rows, n]; W is [m, n].
template <typename T>
IntervalVar<T> propagate_affine(IntervalVar<T> z, Var<T> weight, Var<T> bias) {
  const bool vector_input = z.lower.value().rank() == 1;
  if (vector_input) {
    const int n = z.lower.value().dim(0);
    z.lower = reshape(z.lower, {1, n});
    z.upper = reshape(z.upper, {1, n});
  }
  Var<T> center = scale(add(z.lower, z.upper), T(0.5));
  Var<T> radius = scale(sub(z.upper, z.lower), T(0.5));
  Var<T> out_center = matmul_bt(center, weight);
  if (bias.defined()) out_center = add_rowwise(out_center, bias);
  Var<T> out_radius = matmul_bt(radius, abs(weight));
  IntervalVar<T> out{sub(out_center, out_radius), add(out_center, out_radius)};
  if (vector_input) {
    const int m = out.lower.value().dim(1);
    out.lower = reshape(out.lower, {m});
    out.upper = reshape(out.upper, {m});
  }
  return out;
}

// Convolution is affine, so the same center/half-width equations apply; the
// half-width path convolves with |kernel| and no bias.
template <typename T>
IntervalVar<T> propagate_conv2d(IntervalVar<T> z, Var<T> kernel, Var<T> bias, int stride,
                                int padding) {
  Var<T> center = scale(add(z.lower, z.upper), T(0.5));
  Var<T> radius = scale(sub(z.upper, z.lower), T(0.5));
  Var<T> out_center = conv2d(center, kernel, bias, stride, padding);
  Var<T> out_radius = conv2d(radius, abs(kernel), stride, padding);
  return IntervalVar<T>{sub(out_center, out_radius), add(out_center, out_radius)};
}

// Registry of monotone non-decreasing elementwise activations usable in
// interval propagation.
template <typename T>
using MonotoneFn = std::function<Var<T>(Var<T>)>;

template <typename T>
std::map<std::string, MonotoneFn<T>>& monotone_registry() {
  static std::map<std::string, MonotoneFn<T>> registry = {
      {"relu", [](Var<T> v) { return relu(v); }},
      {"sigmoid", [](Var<T> v) { return sigmoid(v); }},
  };
  return registry;
}

template <typename T>
void register_monotone(const std::string& id, MonotoneFn<T> fn) {
  monotone_registry<T>()[id] = std::move(fn);
}

// h monotone non-decreasing: bounds map through h independently.
template <typename T>
IntervalVar<T> propagate_monotonic(IntervalVar<T> z, const std::string& id) {
  auto& registry = monotone_registry<T>();
  auto it = registry.find(id);
  if (it == registry.end()) {
    std::string known;
    for (const auto& [name, fn] : registry) {
      if (!known.empty()) known += ", ";
      known += name;
    }
    throw ValueError("propagate_monotonic: unknown activation '" + id + "' (known: " + known +
                     ")");
  }
  return IntervalVar<T>{it->second(z.lower), it->second(z.upper)};
}

template <typename T>
Var<T> interval_widths(IntervalVar<T> z) {
  return sub(z.upper, z.lower);
}

// ---- value-level wrappers (no caller-visible tape) --------------------------

template <typename T>
IntervalTensor<T> propagate_affine(const IntervalTensor<T>& z, const Tensor<T>& weight,
                                   const Tensor<T>& bias) {
  Tape<T> tape;
  Var<T> w = tape.constant(weight);
  Var<T> b = bias.defined() ? tape.constant(bias) : Var<T>{};
  return interval_value(propagate_affine(interval_leaf(tape, z), w, b));
}

template <typename T>
IntervalTensor<T> propagate_conv2d(const IntervalTensor<T>& z, const Tensor<T>& kernel,
                                   const Tensor<T>& bias, int stride, int padding) {
  Tape<T> tape;
  Var<T> k = tape.constant(kernel);
  Var<T> b = bias.defined() ? tape.constant(bias) : Var<T>{};
  return interval_value(propagate_conv2d(interval_leaf(tape, z), k, b, stride, padding));
}

template <typename T>
IntervalTensor<T> propagate_monotonic(const IntervalTensor<T>& z, const std::string& id) {
  Tape<T> tape;
  return interval_value(propagate_monotonic(interval_leaf(tape, z), id));
}

template <typename T>
Tensor<T> interval_widths(const IntervalTensor<T>& z) {
  return kernels::sub(z.upper, z.lower);
}

// ---- wrapping-effect demo ----------------------------------------------------

struct WrappingStep {
  int step;                 // 1-based
  double half_width;        // propagated interval half-width (both coords equal)
  double growth_factor;     // half_width / previous half_width
  double exact_half_width;  // tight bounding box of the true rotated square
};

// Repeatedly rotates the unit box by 45 degrees through interval propagation.
// The interval half-width grows by sqrt(2) per step while the true set only
// alternates between the box and its diamond.
inline std::vector<WrappingStep> wrapping_demo(int steps) {
  if (steps < 1) throw ValueError("wrapping_demo: steps must be >= 1");
  const double c = 1.0 / std::sqrt(2.0);
  Tensor<double> rot = Tensor<double>::from_vector({2, 2}, {c, -c, c, c});
  Tensor<double> bias;  // rotation only

  // composed rotation, for the exact bounding box of the true image
  Tensor<double> composed = Tensor<double>::from_vector({2, 2}, {1, 0, 0, 1});

  IntervalTensor<double> box = IntervalTensor<double>::make(
      Tensor<double>::from_vector({2}, {-1, -1}), Tensor<double>::from_vector({2}, {1, 1}));

  std::vector<WrappingStep> out;
  double prev = 1.0;
  for (int s = 1; s <= steps; ++s) {
    box = propagate_affine(box, rot, bias);
    composed = kernels::matmul(rot, composed);
    const double half = 0.5 * (box.upper.at({0}) - box.lower.at({0}));
    // extent of the image of the unit box under the composed linear map
    const double exact =
        std::abs(composed.at({0, 0})) * 1.0 + std::abs(composed.at({0, 1})) * 1.0;
    out.push_back(WrappingStep{s, half, half / prev, exact});
    prev = half;
  }
  return out;
}

}  // namespace ibp
