#pragma once

#include <utility>
#include <vector>

#include "ibp/tensor.hpp"

// Shape-checked dense math shared by the tape ops and the no-grad paths.
// The matrix products are backed by Eigen; everything else is plain loops.
namespace ibp::kernels {

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);  // [m,k]·[k,n]
template <typename T>
Tensor<T> matmul_at(const Tensor<T>& a, const Tensor<T>& b);  // aT·b, a:[k,m] b:[k,n]
template <typename T>
Tensor<T> matmul_bt(const Tensor<T>& a, const Tensor<T>& b);  // a·bT, a:[m,k] b:[n,k]
template <typename T>
Tensor<T> transpose2d(const Tensor<T>& a);

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> scale(const Tensor<T>& a, T c);
template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T c);
template <typename T>
void add_inplace(Tensor<T>& dst, const Tensor<T>& src);

template <typename T>
Tensor<T> relu(const Tensor<T>& a);
template <typename T>
Tensor<T> relu_backward(const Tensor<T>& x, const Tensor<T>& dy);  // dy where x > 0
template <typename T>
Tensor<T> abs_val(const Tensor<T>& a);
template <typename T>
Tensor<T> sign(const Tensor<T>& a);  // sign(0) = 0
template <typename T>
Tensor<T> square(const Tensor<T>& a);
template <typename T>
Tensor<T> sigmoid(const Tensor<T>& a);
template <typename T>
Tensor<T> sigmoid_backward(const Tensor<T>& y, const Tensor<T>& dy);  // y = sigmoid(x)

template <typename T>
Tensor<T> sum(const Tensor<T>& a);  // -> shape {1}
template <typename T>
Tensor<T> mean(const Tensor<T>& a);

// Explicit row-wise forms used for biases and per-channel normalization.
// x is [rows, n], v is [n]; no other broadcasting exists in this library.
template <typename T>
Tensor<T> add_rowwise(const Tensor<T>& x, const Tensor<T>& v);
template <typename T>
Tensor<T> mul_rowwise(const Tensor<T>& x, const Tensor<T>& v);
template <typename T>
Tensor<T> sum_rows(const Tensor<T>& x);  // [rows,n] -> [n]

template <typename T>
Tensor<T> clamp(const Tensor<T>& a, T lo, T hi);
template <typename T>
Tensor<T> min(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> max(const Tensor<T>& a, const Tensor<T>& b);

struct Conv2dDims {
  int batch, in_c, in_h, in_w;
  int out_c, k_h, k_w;
  int out_h, out_w;
  int stride, padding;
  bool batched_input;  // rank-4 input (else rank-3, batch == 1)
};

// Validates shapes and computes output sizes; throws ShapeError when the
// kernel does not fit or channels disagree.
Conv2dDims conv2d_dims(const std::vector<int>& input_shape, const std::vector<int>& kernel_shape,
                       int stride, int padding);

// Patch matrix of shape [B*out_h*out_w, in_c*k_h*k_w]; zero padding.
template <typename T>
Tensor<T> im2col(const Tensor<T>& input, const Conv2dDims& d);
template <typename T>
Tensor<T> conv2d_from_cols(const Tensor<T>& cols, const Tensor<T>& kernel, const Tensor<T>* bias,
                           const Conv2dDims& d);
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<T>* bias,
                 int stride, int padding);
template <typename T>
Tensor<T> conv2d_grad_kernel(const Tensor<T>& cols, const Tensor<T>& dout, const Conv2dDims& d);
template <typename T>
Tensor<T> conv2d_grad_bias(const Tensor<T>& dout, const Conv2dDims& d);
template <typename T>
Tensor<T> conv2d_grad_input(const Tensor<T>& dout, const Tensor<T>& kernel, const Conv2dDims& d);

// Stable log-softmax cross entropy. Returns per-example losses [B] and the
// softmax matrix [B,N] needed by the backward pass.
template <typename T>
std::pair<Tensor<T>, Tensor<T>> softmax_xent(const Tensor<T>& logits, const std::vector<int>& labels);

template <typename T>
Tensor<T> onehot(const std::vector<int>& labels, int num_classes);

}  // namespace ibp::kernels
