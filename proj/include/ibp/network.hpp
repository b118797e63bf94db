#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "ibp/interval.hpp"
#include "ibp/rng.hpp"
#include "ibp/tape.hpp"
#include "ibp/tensor.hpp"

namespace ibp {

enum class LayerKind { Conv, Dense, Relu, Flatten };

struct LayerSpec {
  LayerKind kind = LayerKind::Relu;
  // conv: Conv2d(in_filters, out_filters, kernel_size, stride), zero padding
  int in_filters = 0, out_filters = 0, kernel_size = 0, stride = 0;
  // dense
  int out_features = 0;

  static LayerSpec conv(int in_f, int out_f, int k, int s) {
    LayerSpec l;
    l.kind = LayerKind::Conv;
    l.in_filters = in_f;
    l.out_filters = out_f;
    l.kernel_size = k;
    l.stride = s;
    return l;
  }
  static LayerSpec dense(int out) {
    LayerSpec l;
    l.kind = LayerKind::Dense;
    l.out_features = out;
    return l;
  }
  static LayerSpec relu() {
    LayerSpec l;
    l.kind = LayerKind::Relu;
    return l;
  }
  static LayerSpec flatten() {
    LayerSpec l;
    l.kind = LayerKind::Flatten;
    return l;
  }

  bool parameterized() const { return kind == LayerKind::Conv || kind == LayerKind::Dense; }
};

struct NetworkSpec {
  int in_channels = 0, in_height = 0, in_width = 0;
  std::vector<LayerSpec> layers;
  int num_classes = 0;

  // Output shape of every layer (batch dimension omitted). Throws ShapeError
  // if the stack does not type-check against the input shape or the final
  // width disagrees with num_classes.
  std::vector<std::vector<int>> layer_output_shapes() const;
  void validate() const { layer_output_shapes(); }

  // Dense layers get their input width from the preceding shape.
  int dense_in_features(int layer_index) const;

  std::string to_text() const;
  static NetworkSpec from_text(const std::string& text);
};

// Table-style presets: "small", "medium", "large". A relu follows every conv
// and every dense layer except the final logits layer; a flatten sits before
// the first dense layer.
NetworkSpec preset(const std::string& name, std::array<int, 3> input_shape, int num_classes);

// Fixed per-channel affine input normalization, applied inside the network so
// perturbation radii stay in raw pixel units.
template <typename T>
struct Normalization {
  std::vector<T> mean, std_dev;
  bool enabled() const { return !mean.empty(); }
};

template <typename T>
struct Network {
  NetworkSpec spec;
  std::vector<Tensor<T>> weights;  // conv: [out,in,k,k]; dense: [out,in]
  std::vector<Tensor<T>> biases;   // [out]
  Normalization<T> normalization;

  // Parameters registered as leaves of a tape.
  struct Bound {
    std::vector<Var<T>> weights, biases;
  };
  Bound bind(Tape<T>& tape, bool requires_grad) const {
    Bound b;
    for (const auto& w : weights) b.weights.push_back(tape.leaf(w, requires_grad));
    for (const auto& v : biases) b.biases.push_back(tape.leaf(v, requires_grad));
    return b;
  }

  template <typename U>
  Network<U> cast() const {
    Network<U> out;
    out.spec = spec;
    for (const auto& w : weights) out.weights.push_back(w.template cast<U>());
    for (const auto& b : biases) out.biases.push_back(b.template cast<U>());
    for (T m : normalization.mean) out.normalization.mean.push_back(static_cast<U>(m));
    for (T s : normalization.std_dev) out.normalization.std_dev.push_back(static_cast<U>(s));
    return out;
  }
};

// Fan-in scaled uniform init (+-1/sqrt(fan_in)), zero biases; deterministic
// for a fixed seed.
template <typename T>
Network<T> init_network(const NetworkSpec& spec, std::uint64_t seed,
                        Normalization<T> normalization = {}) {
  spec.validate();
  Network<T> net;
  net.spec = spec;
  net.normalization = std::move(normalization);
  int param_index = 0;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerSpec& l = spec.layers[i];
    if (!l.parameterized()) continue;
    auto rng = make_rng(seed, static_cast<std::uint64_t>(param_index));
    std::vector<int> wshape;
    int fan_in = 0;
    int out = 0;
    if (l.kind == LayerKind::Conv) {
      wshape = {l.out_filters, l.in_filters, l.kernel_size, l.kernel_size};
      fan_in = l.in_filters * l.kernel_size * l.kernel_size;
      out = l.out_filters;
    } else {
      const int in = spec.dense_in_features(static_cast<int>(i));
      wshape = {l.out_features, in};
      fan_in = in;
      out = l.out_features;
    }
    const T bound = T(1) / std::sqrt(static_cast<T>(fan_in));
    Tensor<T> w = Tensor<T>::zeros(wshape);
    T* wp = w.mutable_data();
    const std::int64_t n = w.numel();
    for (std::int64_t j = 0; j < n; ++j) wp[j] = uniform_real<T>(rng, -bound, bound);
    net.weights.push_back(std::move(w));
    net.biases.push_back(Tensor<T>::zeros({out}));
    ++param_index;
  }
  return net;
}

namespace detail {

template <typename T>
std::pair<Tensor<T>, Tensor<T>> normalization_rows(const Network<T>& net) {
  const auto& spec = net.spec;
  const int chw = spec.in_channels * spec.in_height * spec.in_width;
  const int hw = spec.in_height * spec.in_width;
  Tensor<T> offset = Tensor<T>::zeros({chw});
  Tensor<T> inv_scale = Tensor<T>::zeros({chw});
  T* op = offset.mutable_data();
  T* sp = inv_scale.mutable_data();
  for (int c = 0; c < spec.in_channels; ++c) {
    const T m = net.normalization.mean[static_cast<std::size_t>(c)];
    const T s = net.normalization.std_dev[static_cast<std::size_t>(c)];
    for (int i = 0; i < hw; ++i) {
      op[c * hw + i] = -m;
      sp[c * hw + i] = T(1) / s;
    }
  }
  return {offset, inv_scale};
}

// (x - mean) / std as explicit row-wise ops on the flattened view.
template <typename T>
Var<T> apply_normalization(const Network<T>& net, Tape<T>& tape, Var<T> x) {
  if (!net.normalization.enabled()) return x;
  const auto& spec = net.spec;
  const int batch = x.value().dim(0);
  const int chw = spec.in_channels * spec.in_height * spec.in_width;
  auto [offset, inv_scale] = normalization_rows(net);
  Var<T> flat = reshape(x, {batch, chw});
  flat = mul_rowwise(add_rowwise(flat, tape.constant(offset)), tape.constant(inv_scale));
  return reshape(flat, {batch, spec.in_channels, spec.in_height, spec.in_width});
}

}  // namespace detail

template <typename T>
struct LayerValue {
  int layer_index;
  LayerKind kind;
  Var<T> value;
};

template <typename T>
struct LayerBounds {
  int layer_index;
  LayerKind kind;
  IntervalVar<T> bounds;
};

// Nominal forward pass over a batch [B,C,H,W]; returns the value after every
// conv/dense/relu layer (flatten is shape-only), logits last.
template <typename T>
std::vector<LayerValue<T>> network_forward_trace(const Network<T>& net, Tape<T>& tape, Var<T> x,
                                                 const typename Network<T>::Bound& params) {
  if (x.value().rank() != 4) {
    throw ShapeError("forward: expected input [batch, C, H, W], got shape " +
                     shape_to_string(x.value().shape()));
  }
  const auto& spec = net.spec;
  if (x.value().dim(1) != spec.in_channels || x.value().dim(2) != spec.in_height ||
      x.value().dim(3) != spec.in_width) {
    throw ShapeError("forward: input shape " + shape_to_string(x.value().shape()) +
                     " does not match network input " +
                     shape_to_string({spec.in_channels, spec.in_height, spec.in_width}));
  }
  const int batch = x.value().dim(0);
  Var<T> cur = detail::apply_normalization(net, tape, x);
  std::vector<LayerValue<T>> trace;
  int param_index = 0;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerSpec& l = spec.layers[i];
    switch (l.kind) {
      case LayerKind::Conv:
        cur = conv2d(cur, params.weights[static_cast<std::size_t>(param_index)],
                     params.biases[static_cast<std::size_t>(param_index)], l.stride, 0);
        ++param_index;
        break;
      case LayerKind::Dense:
        cur = add_rowwise(matmul_bt(cur, params.weights[static_cast<std::size_t>(param_index)]),
                          params.biases[static_cast<std::size_t>(param_index)]);
        ++param_index;
        break;
      case LayerKind::Relu:
        cur = relu(cur);
        break;
      case LayerKind::Flatten: {
        const auto& s = cur.value().shape();
        int features = 1;
        for (std::size_t d = 1; d < s.size(); ++d) features *= s[d];
        cur = reshape(cur, {batch, features});
        break;
      }
    }
    if (l.kind != LayerKind::Flatten) {
      trace.push_back(LayerValue<T>{static_cast<int>(i), l.kind, cur});
    }
  }
  return trace;
}

template <typename T>
Var<T> network_forward(const Network<T>& net, Tape<T>& tape, Var<T> x,
                       const typename Network<T>::Bound& params) {
  return network_forward_trace(net, tape, x, params).back().value;
}

// Interval forward pass; bounds after every conv/dense/relu layer, in layer
// order, logits bounds last.
template <typename T>
std::vector<LayerBounds<T>> network_forward_interval(const Network<T>& net, Tape<T>& tape,
                                                     IntervalVar<T> z,
                                                     const typename Network<T>::Bound& params) {
  const auto& spec = net.spec;
  const int batch = z.lower.value().dim(0);
  z.lower = detail::apply_normalization(net, tape, z.lower);
  z.upper = detail::apply_normalization(net, tape, z.upper);
  std::vector<LayerBounds<T>> bounds;
  int param_index = 0;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerSpec& l = spec.layers[i];
    switch (l.kind) {
      case LayerKind::Conv:
        z = propagate_conv2d(z, params.weights[static_cast<std::size_t>(param_index)],
                             params.biases[static_cast<std::size_t>(param_index)], l.stride, 0);
        ++param_index;
        break;
      case LayerKind::Dense:
        z = propagate_affine(z, params.weights[static_cast<std::size_t>(param_index)],
                             params.biases[static_cast<std::size_t>(param_index)]);
        ++param_index;
        break;
      case LayerKind::Relu:
        z = propagate_monotonic(z, "relu");
        break;
      case LayerKind::Flatten: {
        const auto& s = z.lower.value().shape();
        int features = 1;
        for (std::size_t d = 1; d < s.size(); ++d) features *= s[d];
        z.lower = reshape(z.lower, {batch, features});
        z.upper = reshape(z.upper, {batch, features});
        break;
      }
    }
    if (l.kind != LayerKind::Flatten) {
      bounds.push_back(LayerBounds<T>{static_cast<int>(i), l.kind, z});
    }
  }
  return bounds;
}

// ---- single-input conveniences ----------------------------------------------

template <typename T>
Tensor<T> add_batch_dim(const Tensor<T>& x) {
  std::vector<int> s = x.shape();
  s.insert(s.begin(), 1);
  return x.reshape(s);
}

// Logits for one [C,H,W] input or a [B,C,H,W] batch.
template <typename T>
Tensor<T> forward(const Network<T>& net, const Tensor<T>& x) {
  const bool single = x.rank() == 3;
  Tape<T> tape;
  auto params = net.bind(tape, false);
  Var<T> in = tape.constant(single ? add_batch_dim(x) : x);
  Var<T> logits = network_forward(net, tape, in, params);
  return single ? logits.value().reshape({net.spec.num_classes}) : logits.value();
}

// All layer bounds for one [C,H,W] interval or a batched one.
template <typename T>
std::vector<IntervalTensor<T>> forward_interval(const Network<T>& net,
                                                const IntervalTensor<T>& z0) {
  const bool single = z0.lower.rank() == 3;
  Tape<T> tape;
  auto params = net.bind(tape, false);
  IntervalVar<T> z = interval_leaf(
      tape,
      single ? IntervalTensor<T>{add_batch_dim(z0.lower), add_batch_dim(z0.upper)} : z0);
  auto bounds = network_forward_interval(net, tape, z, params);
  std::vector<IntervalTensor<T>> out;
  out.reserve(bounds.size());
  for (const auto& b : bounds) {
    IntervalTensor<T> v = interval_value(b.bounds);
    if (single) {
      std::vector<int> s(v.lower.shape().begin() + 1, v.lower.shape().end());
      v.lower = v.lower.reshape(s);
      v.upper = v.upper.reshape(s);
    }
    out.push_back(std::move(v));
  }
  return out;
}

}  // namespace ibp
