#include "ibp/kernels.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>

namespace ibp::kernels {

namespace {

template <typename T>
using MatrixRM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapRM = Eigen::Map<MatrixRM<T>>;
template <typename T>
using ConstMapRM = Eigen::Map<const MatrixRM<T>>;

template <typename T>
ConstMapRM<T> as_matrix(const Tensor<T>& t, int rows, int cols) {
  return ConstMapRM<T>(t.data(), rows, cols);
}

void require_rank2(const std::vector<int>& s, const char* op) {
  if (s.size() != 2) {
    throw ShapeError(std::string(op) + ": expected a rank-2 tensor, got shape " + shape_to_string(s));
  }
}

template <typename T, typename F>
Tensor<T> unary(const Tensor<T>& a, F f) {
  Tensor<T> out = Tensor<T>::zeros(a.shape());
  const T* x = a.data();
  T* y = out.mutable_data();
  const std::int64_t n = a.numel();
  for (std::int64_t i = 0; i < n; ++i) y[i] = f(x[i]);
  return out;
}

template <typename T, typename F>
Tensor<T> binary(const Tensor<T>& a, const Tensor<T>& b, const char* op, F f) {
  require_same_shape(a.shape(), b.shape(), op);
  Tensor<T> out = Tensor<T>::zeros(a.shape());
  const T* x = a.data();
  const T* y = b.data();
  T* z = out.mutable_data();
  const std::int64_t n = a.numel();
  for (std::int64_t i = 0; i < n; ++i) z[i] = f(x[i], y[i]);
  return out;
}

}  // namespace

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  require_rank2(a.shape(), "matmul");
  require_rank2(b.shape(), "matmul");
  if (a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul: inner dimensions disagree, " + shape_to_string(a.shape()) + " x " +
                     shape_to_string(b.shape()));
  }
  Tensor<T> out = Tensor<T>::zeros({a.dim(0), b.dim(1)});
  MapRM<T> c(out.mutable_data(), a.dim(0), b.dim(1));
  c.noalias() = as_matrix(a, a.dim(0), a.dim(1)) * as_matrix(b, b.dim(0), b.dim(1));
  return out;
}

template <typename T>
Tensor<T> matmul_at(const Tensor<T>& a, const Tensor<T>& b) {
  require_rank2(a.shape(), "matmul_at");
  require_rank2(b.shape(), "matmul_at");
  if (a.dim(0) != b.dim(0)) {
    throw ShapeError("matmul_at: leading dimensions disagree, " + shape_to_string(a.shape()) +
                     " x " + shape_to_string(b.shape()));
  }
  Tensor<T> out = Tensor<T>::zeros({a.dim(1), b.dim(1)});
  MapRM<T> c(out.mutable_data(), a.dim(1), b.dim(1));
  c.noalias() = as_matrix(a, a.dim(0), a.dim(1)).transpose() * as_matrix(b, b.dim(0), b.dim(1));
  return out;
}

template <typename T>
Tensor<T> matmul_bt(const Tensor<T>& a, const Tensor<T>& b) {
  require_rank2(a.shape(), "matmul_bt");
  require_rank2(b.shape(), "matmul_bt");
  if (a.dim(1) != b.dim(1)) {
    throw ShapeError("matmul_bt: trailing dimensions disagree, " + shape_to_string(a.shape()) +
                     " x " + shape_to_string(b.shape()));
  }
  Tensor<T> out = Tensor<T>::zeros({a.dim(0), b.dim(0)});
  MapRM<T> c(out.mutable_data(), a.dim(0), b.dim(0));
  c.noalias() = as_matrix(a, a.dim(0), a.dim(1)) * as_matrix(b, b.dim(0), b.dim(1)).transpose();
  return out;
}

template <typename T>
Tensor<T> transpose2d(const Tensor<T>& a) {
  require_rank2(a.shape(), "transpose2d");
  Tensor<T> out = Tensor<T>::zeros({a.dim(1), a.dim(0)});
  MapRM<T> c(out.mutable_data(), a.dim(1), a.dim(0));
  c = as_matrix(a, a.dim(0), a.dim(1)).transpose();
  return out;
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return binary(a, b, "add", [](T x, T y) { return x + y; });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return binary(a, b, "sub", [](T x, T y) { return x - y; });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return binary(a, b, "mul", [](T x, T y) { return x * y; });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T c) {
  return unary(a, [c](T x) { return c * x; });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T c) {
  return unary(a, [c](T x) { return x + c; });
}

template <typename T>
void add_inplace(Tensor<T>& dst, const Tensor<T>& src) {
  require_same_shape(dst.shape(), src.shape(), "add_inplace");
  T* d = dst.mutable_data();
  const T* s = src.data();
  const std::int64_t n = dst.numel();
  for (std::int64_t i = 0; i < n; ++i) d[i] += s[i];
}

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
  return unary(a, [](T x) { return x > T(0) ? x : T(0); });
}

template <typename T>
Tensor<T> relu_backward(const Tensor<T>& x, const Tensor<T>& dy) {
  return binary(x, dy, "relu_backward", [](T xv, T g) { return xv > T(0) ? g : T(0); });
}

template <typename T>
Tensor<T> abs_val(const Tensor<T>& a) {
  return unary(a, [](T x) { return x < T(0) ? -x : x; });
}

template <typename T>
Tensor<T> sign(const Tensor<T>& a) {
  return unary(a, [](T x) { return x > T(0) ? T(1) : (x < T(0) ? T(-1) : T(0)); });
}

template <typename T>
Tensor<T> square(const Tensor<T>& a) {
  return unary(a, [](T x) { return x * x; });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& a) {
  return unary(a, [](T x) {
    // split to avoid overflow in exp for large |x|
    if (x >= T(0)) {
      T e = std::exp(-x);
      return T(1) / (T(1) + e);
    }
    T e = std::exp(x);
    return e / (T(1) + e);
  });
}

template <typename T>
Tensor<T> sigmoid_backward(const Tensor<T>& y, const Tensor<T>& dy) {
  return binary(y, dy, "sigmoid_backward", [](T yv, T g) { return g * yv * (T(1) - yv); });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
  const T* x = a.data();
  // accumulate in double so float32 reductions stay accurate
  double acc = 0;
  const std::int64_t n = a.numel();
  for (std::int64_t i = 0; i < n; ++i) acc += static_cast<double>(x[i]);
  return Tensor<T>::scalar(static_cast<T>(acc));
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a) {
  Tensor<T> s = sum(a);
  return Tensor<T>::scalar(static_cast<T>(s.item() / static_cast<T>(a.numel())));
}

template <typename T>
Tensor<T> add_rowwise(const Tensor<T>& x, const Tensor<T>& v) {
  require_rank2(x.shape(), "add_rowwise");
  if (v.rank() != 1 || v.dim(0) != x.dim(1)) {
    throw ShapeError("add_rowwise: row vector " + shape_to_string(v.shape()) +
                     " does not match matrix " + shape_to_string(x.shape()));
  }
  Tensor<T> out = Tensor<T>::zeros(x.shape());
  const T* xp = x.data();
  const T* vp = v.data();
  T* op = out.mutable_data();
  const int rows = x.dim(0), cols = x.dim(1);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) op[r * cols + c] = xp[r * cols + c] + vp[c];
  return out;
}

template <typename T>
Tensor<T> mul_rowwise(const Tensor<T>& x, const Tensor<T>& v) {
  require_rank2(x.shape(), "mul_rowwise");
  if (v.rank() != 1 || v.dim(0) != x.dim(1)) {
    throw ShapeError("mul_rowwise: row vector " + shape_to_string(v.shape()) +
                     " does not match matrix " + shape_to_string(x.shape()));
  }
  Tensor<T> out = Tensor<T>::zeros(x.shape());
  const T* xp = x.data();
  const T* vp = v.data();
  T* op = out.mutable_data();
  const int rows = x.dim(0), cols = x.dim(1);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) op[r * cols + c] = xp[r * cols + c] * vp[c];
  return out;
}

template <typename T>
Tensor<T> sum_rows(const Tensor<T>& x) {
  require_rank2(x.shape(), "sum_rows");
  Tensor<T> out = Tensor<T>::zeros({x.dim(1)});
  const T* xp = x.data();
  T* op = out.mutable_data();
  const int rows = x.dim(0), cols = x.dim(1);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) op[c] += xp[r * cols + c];
  return out;
}

template <typename T>
Tensor<T> clamp(const Tensor<T>& a, T lo, T hi) {
  return unary(a, [lo, hi](T x) { return x < lo ? lo : (x > hi ? hi : x); });
}

template <typename T>
Tensor<T> min(const Tensor<T>& a, const Tensor<T>& b) {
  return binary(a, b, "min", [](T x, T y) { return x < y ? x : y; });
}

template <typename T>
Tensor<T> max(const Tensor<T>& a, const Tensor<T>& b) {
  return binary(a, b, "max", [](T x, T y) { return x > y ? x : y; });
}

Conv2dDims conv2d_dims(const std::vector<int>& input_shape, const std::vector<int>& kernel_shape,
                       int stride, int padding) {
  if (kernel_shape.size() != 4) {
    throw ShapeError("conv2d: kernel must be rank-4 [out_c, in_c, kh, kw], got " +
                     shape_to_string(kernel_shape));
  }
  if (input_shape.size() != 3 && input_shape.size() != 4) {
    throw ShapeError("conv2d: input must be [C,H,W] or [B,C,H,W], got " +
                     shape_to_string(input_shape));
  }
  if (stride < 1) throw ValueError("conv2d: stride must be positive");
  if (padding < 0) throw ValueError("conv2d: padding must be non-negative");

  Conv2dDims d;
  d.batched_input = input_shape.size() == 4;
  d.batch = d.batched_input ? input_shape[0] : 1;
  const int off = d.batched_input ? 1 : 0;
  d.in_c = input_shape[off];
  d.in_h = input_shape[off + 1];
  d.in_w = input_shape[off + 2];
  d.out_c = kernel_shape[0];
  d.k_h = kernel_shape[2];
  d.k_w = kernel_shape[3];
  d.stride = stride;
  d.padding = padding;
  if (kernel_shape[1] != d.in_c) {
    throw ShapeError("conv2d: kernel expects " + std::to_string(kernel_shape[1]) +
                     " input channels, input has " + std::to_string(d.in_c));
  }
  d.out_h = (d.in_h + 2 * padding - d.k_h) / stride + 1;
  d.out_w = (d.in_w + 2 * padding - d.k_w) / stride + 1;
  if (d.in_h + 2 * padding < d.k_h || d.in_w + 2 * padding < d.k_w || d.out_h < 1 || d.out_w < 1) {
    throw ShapeError("conv2d: non-positive output size for input " + shape_to_string(input_shape) +
                     ", kernel " + shape_to_string(kernel_shape) + ", stride " +
                     std::to_string(stride) + ", padding " + std::to_string(padding));
  }
  return d;
}

template <typename T>
Tensor<T> im2col(const Tensor<T>& input, const Conv2dDims& d) {
  const int patch = d.in_c * d.k_h * d.k_w;
  Tensor<T> cols = Tensor<T>::zeros({d.batch * d.out_h * d.out_w, patch});
  const T* in = input.data();
  T* out = cols.mutable_data();
  const std::int64_t in_img = static_cast<std::int64_t>(d.in_c) * d.in_h * d.in_w;
  for (int b = 0; b < d.batch; ++b) {
    const T* img = in + b * in_img;
    std::int64_t row = static_cast<std::int64_t>(b) * d.out_h * d.out_w;
    for (int oh = 0; oh < d.out_h; ++oh) {
      for (int ow = 0; ow < d.out_w; ++ow, ++row) {
        T* dst = out + row * patch;
        const int h0 = oh * d.stride - d.padding;
        const int w0 = ow * d.stride - d.padding;
        for (int c = 0; c < d.in_c; ++c) {
          for (int kh = 0; kh < d.k_h; ++kh) {
            const int h = h0 + kh;
            for (int kw = 0; kw < d.k_w; ++kw, ++dst) {
              const int w = w0 + kw;
              if (h >= 0 && h < d.in_h && w >= 0 && w < d.in_w) {
                *dst = img[(static_cast<std::int64_t>(c) * d.in_h + h) * d.in_w + w];
              }
            }
          }
        }
      }
    }
  }
  return cols;
}

template <typename T>
Tensor<T> conv2d_from_cols(const Tensor<T>& cols, const Tensor<T>& kernel, const Tensor<T>* bias,
                           const Conv2dDims& d) {
  const int patch = d.in_c * d.k_h * d.k_w;
  const int ohw = d.out_h * d.out_w;
  std::vector<int> out_shape = d.batched_input
                                   ? std::vector<int>{d.batch, d.out_c, d.out_h, d.out_w}
                                   : std::vector<int>{d.out_c, d.out_h, d.out_w};
  Tensor<T> out = Tensor<T>::zeros(out_shape);
  ConstMapRM<T> kmat(kernel.data(), d.out_c, patch);
  for (int b = 0; b < d.batch; ++b) {
    ConstMapRM<T> pb(cols.data() + static_cast<std::int64_t>(b) * ohw * patch, ohw, patch);
    MapRM<T> ob(out.mutable_data() + static_cast<std::int64_t>(b) * d.out_c * ohw, d.out_c, ohw);
    ob.noalias() = kmat * pb.transpose();
  }
  if (bias) {
    if (bias->rank() != 1 || bias->dim(0) != d.out_c) {
      throw ShapeError("conv2d: bias shape " + shape_to_string(bias->shape()) + " does not match " +
                       std::to_string(d.out_c) + " output channels");
    }
    T* op = out.mutable_data();
    const T* bp = bias->data();
    for (int b = 0; b < d.batch; ++b)
      for (int c = 0; c < d.out_c; ++c) {
        T* base = op + (static_cast<std::int64_t>(b) * d.out_c + c) * ohw;
        for (int i = 0; i < ohw; ++i) base[i] += bp[c];
      }
  }
  return out;
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<T>* bias,
                 int stride, int padding) {
  Conv2dDims d = conv2d_dims(input.shape(), kernel.shape(), stride, padding);
  Tensor<T> cols = im2col(input, d);
  return conv2d_from_cols(cols, kernel, bias, d);
}

template <typename T>
Tensor<T> conv2d_grad_kernel(const Tensor<T>& cols, const Tensor<T>& dout, const Conv2dDims& d) {
  const int patch = d.in_c * d.k_h * d.k_w;
  const int ohw = d.out_h * d.out_w;
  Tensor<T> dk = Tensor<T>::zeros({d.out_c, d.in_c, d.k_h, d.k_w});
  MapRM<T> dkm(dk.mutable_data(), d.out_c, patch);
  for (int b = 0; b < d.batch; ++b) {
    ConstMapRM<T> dob(dout.data() + static_cast<std::int64_t>(b) * d.out_c * ohw, d.out_c, ohw);
    ConstMapRM<T> pb(cols.data() + static_cast<std::int64_t>(b) * ohw * patch, ohw, patch);
    dkm.noalias() += dob * pb;
  }
  return dk;
}

template <typename T>
Tensor<T> conv2d_grad_bias(const Tensor<T>& dout, const Conv2dDims& d) {
  const int ohw = d.out_h * d.out_w;
  Tensor<T> db = Tensor<T>::zeros({d.out_c});
  const T* dp = dout.data();
  T* bp = db.mutable_data();
  for (int b = 0; b < d.batch; ++b)
    for (int c = 0; c < d.out_c; ++c) {
      const T* base = dp + (static_cast<std::int64_t>(b) * d.out_c + c) * ohw;
      double acc = 0;
      for (int i = 0; i < ohw; ++i) acc += static_cast<double>(base[i]);
      bp[c] += static_cast<T>(acc);
    }
  return db;
}

template <typename T>
Tensor<T> conv2d_grad_input(const Tensor<T>& dout, const Tensor<T>& kernel, const Conv2dDims& d) {
  const int patch = d.in_c * d.k_h * d.k_w;
  const int ohw = d.out_h * d.out_w;
  std::vector<int> in_shape = d.batched_input
                                  ? std::vector<int>{d.batch, d.in_c, d.in_h, d.in_w}
                                  : std::vector<int>{d.in_c, d.in_h, d.in_w};
  Tensor<T> dx = Tensor<T>::zeros(in_shape);
  ConstMapRM<T> kmat(kernel.data(), d.out_c, patch);
  MatrixRM<T> dcols(ohw, patch);
  T* dxp = dx.mutable_data();
  const std::int64_t in_img = static_cast<std::int64_t>(d.in_c) * d.in_h * d.in_w;
  for (int b = 0; b < d.batch; ++b) {
    ConstMapRM<T> dob(dout.data() + static_cast<std::int64_t>(b) * d.out_c * ohw, d.out_c, ohw);
    dcols.noalias() = dob.transpose() * kmat;
    // col2im scatter-add
    T* img = dxp + b * in_img;
    std::int64_t row = 0;
    for (int oh = 0; oh < d.out_h; ++oh) {
      for (int ow = 0; ow < d.out_w; ++ow, ++row) {
        const T* src = dcols.data() + row * patch;
        const int h0 = oh * d.stride - d.padding;
        const int w0 = ow * d.stride - d.padding;
        for (int c = 0; c < d.in_c; ++c) {
          for (int kh = 0; kh < d.k_h; ++kh) {
            const int h = h0 + kh;
            for (int kw = 0; kw < d.k_w; ++kw, ++src) {
              const int w = w0 + kw;
              if (h >= 0 && h < d.in_h && w >= 0 && w < d.in_w) {
                img[(static_cast<std::int64_t>(c) * d.in_h + h) * d.in_w + w] += *src;
              }
            }
          }
        }
      }
    }
  }
  return dx;
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> softmax_xent(const Tensor<T>& logits,
                                             const std::vector<int>& labels) {
  require_rank2(logits.shape(), "softmax_xent");
  const int rows = logits.dim(0), n = logits.dim(1);
  if (static_cast<int>(labels.size()) != rows) {
    throw ShapeError("softmax_xent: " + std::to_string(labels.size()) + " labels for " +
                     std::to_string(rows) + " rows");
  }
  Tensor<T> losses = Tensor<T>::zeros({rows});
  Tensor<T> soft = Tensor<T>::zeros({rows, n});
  const T* lp = logits.data();
  T* sp = soft.mutable_data();
  T* out = losses.mutable_data();
  for (int r = 0; r < rows; ++r) {
    const int y = labels[static_cast<std::size_t>(r)];
    if (y < 0 || y >= n) {
      throw ValueError("softmax_xent: label " + std::to_string(y) + " out of range [0," +
                       std::to_string(n) + ")");
    }
    const T* row = lp + static_cast<std::int64_t>(r) * n;
    T mx = row[0];
    for (int j = 1; j < n; ++j) mx = std::max(mx, row[j]);
    double denom = 0;
    for (int j = 0; j < n; ++j) denom += std::exp(static_cast<double>(row[j] - mx));
    const double log_denom = std::log(denom);
    T* srow = sp + static_cast<std::int64_t>(r) * n;
    for (int j = 0; j < n; ++j) {
      srow[j] = static_cast<T>(std::exp(static_cast<double>(row[j] - mx)) / denom);
    }
    out[r] = static_cast<T>(log_denom - static_cast<double>(row[y] - mx));
  }
  return {losses, soft};
}

template <typename T>
Tensor<T> onehot(const std::vector<int>& labels, int num_classes) {
  Tensor<T> out = Tensor<T>::zeros({static_cast<int>(labels.size()), num_classes});
  T* p = out.mutable_data();
  for (std::size_t r = 0; r < labels.size(); ++r) {
    const int y = labels[r];
    if (y < 0 || y >= num_classes) {
      throw ValueError("onehot: label " + std::to_string(y) + " out of range [0," +
                       std::to_string(num_classes) + ")");
    }
    p[r * static_cast<std::size_t>(num_classes) + static_cast<std::size_t>(y)] = T(1);
  }
  return out;
}

#define IBP_INSTANTIATE_KERNELS(T)                                                               \
  template Tensor<T> matmul<T>(const Tensor<T>&, const Tensor<T>&);                              \
  template Tensor<T> matmul_at<T>(const Tensor<T>&, const Tensor<T>&);                           \
  template Tensor<T> matmul_bt<T>(const Tensor<T>&, const Tensor<T>&);                           \
  template Tensor<T> transpose2d<T>(const Tensor<T>&);                                           \
  template Tensor<T> add<T>(const Tensor<T>&, const Tensor<T>&);                                 \
  template Tensor<T> sub<T>(const Tensor<T>&, const Tensor<T>&);                                 \
  template Tensor<T> mul<T>(const Tensor<T>&, const Tensor<T>&);                                 \
  template Tensor<T> scale<T>(const Tensor<T>&, T);                                              \
  template Tensor<T> add_scalar<T>(const Tensor<T>&, T);                                         \
  template void add_inplace<T>(Tensor<T>&, const Tensor<T>&);                                    \
  template Tensor<T> relu<T>(const Tensor<T>&);                                                  \
  template Tensor<T> relu_backward<T>(const Tensor<T>&, const Tensor<T>&);                       \
  template Tensor<T> abs_val<T>(const Tensor<T>&);                                               \
  template Tensor<T> sign<T>(const Tensor<T>&);                                                  \
  template Tensor<T> square<T>(const Tensor<T>&);                                                \
  template Tensor<T> sigmoid<T>(const Tensor<T>&);                                               \
  template Tensor<T> sigmoid_backward<T>(const Tensor<T>&, const Tensor<T>&);                    \
  template Tensor<T> sum<T>(const Tensor<T>&);                                                   \
  template Tensor<T> mean<T>(const Tensor<T>&);                                                  \
  template Tensor<T> add_rowwise<T>(const Tensor<T>&, const Tensor<T>&);                         \
  template Tensor<T> mul_rowwise<T>(const Tensor<T>&, const Tensor<T>&);                         \
  template Tensor<T> sum_rows<T>(const Tensor<T>&);                                              \
  template Tensor<T> clamp<T>(const Tensor<T>&, T, T);                                           \
  template Tensor<T> min<T>(const Tensor<T>&, const Tensor<T>&);                                 \
  template Tensor<T> max<T>(const Tensor<T>&, const Tensor<T>&);                                 \
  template Tensor<T> im2col<T>(const Tensor<T>&, const Conv2dDims&);                             \
  template Tensor<T> conv2d_from_cols<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>*,   \
                                         const Conv2dDims&);                                     \
  template Tensor<T> conv2d<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>*, int, int);  \
  template Tensor<T> conv2d_grad_kernel<T>(const Tensor<T>&, const Tensor<T>&, const Conv2dDims&); \
  template Tensor<T> conv2d_grad_bias<T>(const Tensor<T>&, const Conv2dDims&);                   \
  template Tensor<T> conv2d_grad_input<T>(const Tensor<T>&, const Tensor<T>&, const Conv2dDims&); \
  template std::pair<Tensor<T>, Tensor<T>> softmax_xent<T>(const Tensor<T>&,                     \
                                                           const std::vector<int>&);             \
  template Tensor<T> onehot<T>(const std::vector<int>&, int);

IBP_INSTANTIATE_KERNELS(float)
IBP_INSTANTIATE_KERNELS(double)

#undef IBP_INSTANTIATE_KERNELS

}  // namespace ibp::kernels
