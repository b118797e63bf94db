#pragma once

// Independent reference implementations used by the test suites. Everything
// here is deliberately naive (plain loops, exhaustive enumeration) and stays
// off the library's compute paths.

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <random>
#include <vector>

#include "ibp/network.hpp"
#include "ibp/rng.hpp"
#include "ibp/tensor.hpp"

namespace oracles {

// C = A B with the classic triple loop.
template <typename T>
ibp::Tensor<T> matmul_naive(const ibp::Tensor<T>& a, const ibp::Tensor<T>& b) {
  const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  ibp::Tensor<T> c = ibp::Tensor<T>::zeros({m, n});
  T* cp = c.mutable_data();
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) {
      T acc = 0;
      for (int l = 0; l < k; ++l) acc += a.at({i, l}) * b.at({l, j});
      cp[i * n + j] = acc;
    }
  }
  return c;
}

// Direct six-loop cross-correlation, single image [C,H,W].
template <typename T>
ibp::Tensor<T> conv2d_naive(const ibp::Tensor<T>& input, const ibp::Tensor<T>& kernel,
                            const ibp::Tensor<T>& bias, int stride, int padding) {
  const int in_c = input.dim(0), in_h = input.dim(1), in_w = input.dim(2);
  const int out_c = kernel.dim(0), kh = kernel.dim(2), kw = kernel.dim(3);
  const int out_h = (in_h + 2 * padding - kh) / stride + 1;
  const int out_w = (in_w + 2 * padding - kw) / stride + 1;
  ibp::Tensor<T> out = ibp::Tensor<T>::zeros({out_c, out_h, out_w});
  T* op = out.mutable_data();
  for (int oc = 0; oc < out_c; ++oc) {
    for (int oh = 0; oh < out_h; ++oh) {
      for (int ow = 0; ow < out_w; ++ow) {
        T acc = bias.defined() ? bias.at({oc}) : T(0);
        for (int ic = 0; ic < in_c; ++ic) {
          for (int y = 0; y < kh; ++y) {
            for (int x = 0; x < kw; ++x) {
              const int iy = oh * stride - padding + y;
              const int ix = ow * stride - padding + x;
              if (iy >= 0 && iy < in_h && ix >= 0 && ix < in_w) {
                acc += input.at({ic, iy, ix}) * kernel.at({oc, ic, y, x});
              }
            }
          }
        }
        op[(oc * out_h + oh) * out_w + ow] = acc;
      }
    }
  }
  return out;
}

// Exact interval image of an affine map: extremes occur at box corners, and
// per output coordinate they decompose per input coordinate.
template <typename T>
ibp::IntervalTensor<T> affine_interval_exact(const ibp::IntervalTensor<T>& z,
                                             const ibp::Tensor<T>& w, const ibp::Tensor<T>& b) {
  const int m = w.dim(0), n = w.dim(1);
  ibp::Tensor<T> lo = ibp::Tensor<T>::zeros({m});
  ibp::Tensor<T> hi = ibp::Tensor<T>::zeros({m});
  T* lop = lo.mutable_data();
  T* hip = hi.mutable_data();
  for (int i = 0; i < m; ++i) {
    T lo_acc = b.defined() ? b.at({i}) : T(0);
    T hi_acc = lo_acc;
    for (int j = 0; j < n; ++j) {
      const T wij = w.at({i, j});
      const T a = wij * z.lower.at({j});
      const T c = wij * z.upper.at({j});
      lo_acc += std::min(a, c);
      hi_acc += std::max(a, c);
    }
    lop[i] = lo_acc;
    hip[i] = hi_acc;
  }
  return ibp::IntervalTensor<T>{lo, hi};
}

// Exhaustive 2^D corner sweep of W z + b over the box; D <= ~20.
template <typename T>
ibp::IntervalTensor<T> affine_interval_corners(const ibp::IntervalTensor<T>& z,
                                               const ibp::Tensor<T>& w, const ibp::Tensor<T>& b) {
  const int m = w.dim(0), n = w.dim(1);
  std::vector<T> lo(static_cast<std::size_t>(m), std::numeric_limits<T>::infinity());
  std::vector<T> hi(static_cast<std::size_t>(m), -std::numeric_limits<T>::infinity());
  std::vector<T> point(static_cast<std::size_t>(n));
  for (std::uint64_t mask = 0; mask < (1ULL << n); ++mask) {
    for (int j = 0; j < n; ++j) {
      point[static_cast<std::size_t>(j)] =
          (mask >> j) & 1 ? z.upper.at({j}) : z.lower.at({j});
    }
    for (int i = 0; i < m; ++i) {
      T acc = b.defined() ? b.at({i}) : T(0);
      for (int j = 0; j < n; ++j) acc += w.at({i, j}) * point[static_cast<std::size_t>(j)];
      lo[static_cast<std::size_t>(i)] = std::min(lo[static_cast<std::size_t>(i)], acc);
      hi[static_cast<std::size_t>(i)] = std::max(hi[static_cast<std::size_t>(i)], acc);
    }
  }
  return ibp::IntervalTensor<T>{ibp::Tensor<T>::from_vector({m}, lo),
                                ibp::Tensor<T>::from_vector({m}, hi)};
}

inline bool close(double a, double b, double rel, double abs_tol) {
  const double diff = std::abs(a - b);
  if (diff <= abs_tol) return true;
  return diff <= rel * std::max(std::abs(a), std::abs(b));
}

// Central-difference gradient check. `loss` must be a pure function of the
// tensor entries reached through `data` (a mutable view into the parameter).
// Gradient entries are compared with rel err < 1e-4 (abs < 1e-7 near zero).
struct GradCheckResult {
  int checked = 0;
  int failed = 0;
  double worst_rel = 0;
};

inline GradCheckResult gradcheck(double* data, const double* analytic, std::int64_t count,
                                 const std::function<double()>& loss, double h = 1e-5,
                                 double rel_tol = 1e-4, double abs_tol = 1e-7) {
  GradCheckResult r;
  for (std::int64_t i = 0; i < count; ++i) {
    const double saved = data[i];
    data[i] = saved + h;
    const double up = loss();
    data[i] = saved - h;
    const double down = loss();
    data[i] = saved;
    const double numeric = (up - down) / (2 * h);
    ++r.checked;
    const double diff = std::abs(numeric - analytic[i]);
    if (diff > abs_tol) {
      const double rel = diff / std::max({std::abs(numeric), std::abs(analytic[i]), 1e-12});
      r.worst_rel = std::max(r.worst_rel, rel);
      if (rel > rel_tol) ++r.failed;
    }
  }
  return r;
}

// Random mixed conv/dense/relu architectures with small input shapes, for the
// soundness and gradient suites.
inline ibp::NetworkSpec random_spec(std::mt19937& rng, bool allow_conv = true) {
  using ibp::LayerSpec;
  ibp::NetworkSpec spec;
  const bool conv_net = allow_conv && (rng() & 1u);
  std::vector<LayerSpec> layers;
  int depth = 0;
  const int target_depth = 2 + static_cast<int>(ibp::uniform_u32(rng, 5));  // 2..6
  if (conv_net) {
    int c = 1 + static_cast<int>(ibp::uniform_u32(rng, 2));
    int h = 5 + static_cast<int>(ibp::uniform_u32(rng, 3));  // 5..7
    int w = h;
    spec.in_channels = c;
    spec.in_height = h;
    spec.in_width = w;
    while (depth < target_depth - 1) {
      const int k = 2 + static_cast<int>(ibp::uniform_u32(rng, 2));  // 2..3
      const int s = 1 + static_cast<int>(ibp::uniform_u32(rng, 2));  // 1..2
      if (h < k || (h - k) / s + 1 < 2) break;
      const int oc = 2 + static_cast<int>(ibp::uniform_u32(rng, 3));
      layers.push_back(LayerSpec::conv(c, oc, k, s));
      layers.push_back(LayerSpec::relu());
      c = oc;
      h = (h - k) / s + 1;
      w = h;
      ++depth;
    }
    layers.push_back(LayerSpec::flatten());
  } else {
    const int d = 3 + static_cast<int>(ibp::uniform_u32(rng, 8));  // 3..10 inputs
    spec.in_channels = d;
    spec.in_height = 1;
    spec.in_width = 1;
    layers.push_back(LayerSpec::flatten());
  }
  while (depth < target_depth - 1) {
    layers.push_back(LayerSpec::dense(2 + static_cast<int>(ibp::uniform_u32(rng, 7))));
    layers.push_back(LayerSpec::relu());
    ++depth;
  }
  spec.num_classes = 2 + static_cast<int>(ibp::uniform_u32(rng, 4));
  layers.push_back(LayerSpec::dense(spec.num_classes));
  spec.layers = std::move(layers);
  spec.validate();
  return spec;
}

// Pushes parameters away from the abs/relu kinks so finite differences with
// step h do not straddle a non-differentiable point.
template <typename T>
void nudge_away_from_zero(ibp::Network<T>& net, T threshold) {
  for (auto& w : net.weights) {
    T* p = w.mutable_data();
    for (std::int64_t i = 0; i < w.numel(); ++i) {
      if (std::abs(p[i]) < threshold) p[i] = p[i] < 0 ? -threshold : threshold;
    }
  }
}

}  // namespace oracles
