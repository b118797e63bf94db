#pragma once

#include <cassert>
#include <functional>
#include <utility>
#include <vector>

#include "ibp/kernels.hpp"
#include "ibp/tensor.hpp"

namespace ibp {

template <typename T>
class Tape;

// Handle to a value recorded on a tape.
template <typename T>
struct Var {
  Tape<T>* tape = nullptr;
  int id = -1;

  bool defined() const { return tape != nullptr && id >= 0; }
  const Tensor<T>& value() const;
  const Tensor<T>& grad() const;
  const std::vector<int>& shape() const { return value().shape(); }
};

// Reverse-mode tape over whole-tensor primitives. Recording order is a
// topological order, so the backward pass is a single reverse sweep. One tape
// per evaluation; a tape is never reused across batches.
template <typename T>
class Tape {
 public:
  using Backprop = std::function<void(Tape&, int self)>;

  Var<T> leaf(Tensor<T> v, bool requires_grad = false) {
    return record(std::move(v), requires_grad, nullptr);
  }

  Var<T> constant(Tensor<T> v) { return leaf(std::move(v), false); }

  Var<T> record(Tensor<T> value, bool requires_grad, Backprop backprop) {
    nodes_.push_back(Node{std::move(value), std::move(backprop), requires_grad});
    grads_.emplace_back();
    Var<T> v;
    v.tape = this;
    v.id = static_cast<int>(nodes_.size()) - 1;
    return v;
  }

  const Tensor<T>& value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }

  bool needs_grad(int id) const {
    return id >= 0 && nodes_[static_cast<std::size_t>(id)].requires_grad;
  }

  bool has_grad(int id) const { return grads_[static_cast<std::size_t>(id)].defined(); }

  // Zero tensor when no gradient reached the node.
  const Tensor<T>& grad(int id) {
    auto& g = grads_[static_cast<std::size_t>(id)];
    if (!g.defined()) g = Tensor<T>::zeros(nodes_[static_cast<std::size_t>(id)].value.shape());
    return g;
  }

  void accumulate(int id, const Tensor<T>& g) {
    auto& slot = grads_[static_cast<std::size_t>(id)];
    if (!slot.defined()) {
      slot = g.clone();  // grads are tape-owned buffers; never alias op outputs
    } else {
      kernels::add_inplace(slot, g);
    }
  }

  // d(root)/d(every value that requires grad); root must be scalar.
  void backward(const Var<T>& root) {
    assert(root.tape == this);
    if (nodes_[static_cast<std::size_t>(root.id)].value.numel() != 1) {
      throw ShapeError("backward: root must be a scalar");
    }
    accumulate(root.id, Tensor<T>::scalar(T(1)));
    for (int i = root.id; i >= 0; --i) {
      auto& node = nodes_[static_cast<std::size_t>(i)];
      if (node.backprop && node.requires_grad && grads_[static_cast<std::size_t>(i)].defined()) {
        node.backprop(*this, i);
      }
    }
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor<T> value;
    Backprop backprop;
    bool requires_grad;
  };

  std::vector<Node> nodes_;
  std::vector<Tensor<T>> grads_;
};

template <typename T>
const Tensor<T>& Var<T>::value() const {
  return tape->value(id);
}

template <typename T>
const Tensor<T>& Var<T>::grad() const {
  return tape->grad(id);
}

namespace detail {

template <typename T>
bool any_needs(const Tape<T>& tape, std::initializer_list<int> ids) {
  for (int id : ids) {
    if (tape.needs_grad(id)) return true;
  }
  return false;
}

}  // namespace detail

// ---- primitives ------------------------------------------------------------

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b) {
  assert(a.tape == b.tape);
  Tape<T>& t = *a.tape;
  Tensor<T> out = kernels::matmul(a.value(), b.value());
  const bool needs = detail::any_needs(t, {a.id, b.id});
  typename Tape<T>::Backprop bp;
  if (needs) {
    Tensor<T> av = a.value(), bv = b.value();
    const int aid = a.id, bid = b.id;
    bp = [av, bv, aid, bid](Tape<T>& tp, int self) {
      const Tensor<T>& dy = tp.grad(self);
      if (tp.needs_grad(aid)) tp.accumulate(aid, kernels::matmul_bt(dy, bv));
      if (tp.needs_grad(bid)) tp.accumulate(bid, kernels::matmul_at(av, dy));
    };
  }
  return t.record(std::move(out), needs, std::move(bp));
}

// a·bT; the batched dense-layer product (rows of a are examples, rows of b are
// output units).
template <typename T>
Var<T> matmul_bt(Var<T> a, Var<T> b) {
  assert(a.tape == b.tape);
  Tape<T>& t = *a.tape;
  Tensor<T> out = kernels::matmul_bt(a.value(), b.value());
  const bool needs = detail::any_needs(t, {a.id, b.id});
  typename Tape<T>::Backprop bp;
  if (needs) {
    Tensor<T> av = a.value(), bv = b.value();
    const int aid = a.id, bid = b.id;
    bp = [av, bv, aid, bid](Tape<T>& tp, int self) {
      const Tensor<T>& dy = tp.grad(self);
      if (tp.needs_grad(aid)) tp.accumulate(aid, kernels::matmul(dy, bv));
      if (tp.needs_grad(bid)) tp.accumulate(bid, kernels::matmul_at(dy, av));
    };
  }
  return t.record(std::move(out), needs, std::move(bp));
}

// Cross-correlation plus optional per-channel bias; pass a default-constructed
// Var to omit the bias.
template <typename T>
Var<T> conv2d(Var<T> x, Var<T> kernel, Var<T> bias, int stride, int padding) {
  assert(x.tape == kernel.tape);
  Tape<T>& t = *x.tape;
  kernels::Conv2dDims dims =
      kernels::conv2d_dims(x.value().shape(), kernel.value().shape(), stride, padding);
  Tensor<T> cols = kernels::im2col(x.value(), dims);
  const Tensor<T>* bias_ptr = bias.defined() ? &bias.value() : nullptr;
  Tensor<T> out = kernels::conv2d_from_cols(cols, kernel.value(), bias_ptr, dims);
  const bool needs = detail::any_needs(t, {x.id, kernel.id, bias.id});
  typename Tape<T>::Backprop bp;
  if (needs) {
    Tensor<T> kv = kernel.value();
    const int xid = x.id, kid = kernel.id, bid = bias.id;
    bp = [cols, kv, dims, xid, kid, bid](Tape<T>& tp, int self) {
      const Tensor<T>& dy = tp.grad(self);
      if (tp.needs_grad(xid)) tp.accumulate(xid, kernels::conv2d_grad_input(dy, kv, dims));
      if (tp.needs_grad(kid)) tp.accumulate(kid, kernels::conv2d_grad_kernel(cols, dy, dims));
      if (bid >= 0 && tp.needs_grad(bid)) tp.accumulate(bid, kernels::conv2d_grad_bias(dy, dims));
    };
  }
  return t.record(std::move(out), needs, std::move(bp));
}

template <typename T>
Var<T> conv2d(Var<T> x, Var<T> kernel, int stride, int padding) {
  return conv2d(x, kernel, Var<T>{}, stride, padding);
}

namespace detail {

template <typename T>
Var<T> binary_op(Var<T> a, Var<T> b, Tensor<T> out,
                 std::function<Tensor<T>(const Tensor<T>&)> da,
                 std::function<Tensor<T>(const Tensor<T>&)> db) {
  Tape<T>& t = *a.tape;
  const bool needs = any_needs(t, {a.id, b.id});
  typename Tape<T>::Backprop bp;
  if (needs) {
    const int aid = a.id, bid = b.id;
    bp = [aid, bid, da = std::move(da), db = std::move(db)](Tape<T>& tp, int self) {
      const Tensor<T>& dy = tp.grad(self);
      if (tp.needs_grad(aid)) tp.accumulate(aid, da(dy));
      if (tp.needs_grad(bid)) tp.accumulate(bid, db(dy));
    };
  }
  return t.record(std::move(out), needs, std::move(bp));
}

template <typename T>
Var<T> unary_op(Var<T> a, Tensor<T> out, std::function<Tensor<T>(const Tensor<T>&)> da) {
  Tape<T>& t = *a.tape;
  const bool needs = t.needs_grad(a.id);
  typename Tape<T>::Backprop bp;
  if (needs) {
    const int aid = a.id;
    bp = [aid, da = std::move(da)](Tape<T>& tp, int self) {
      tp.accumulate(aid, da(tp.grad(self)));
    };
  }
  return t.record(std::move(out), needs, std::move(bp));
}

}  // namespace detail

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  assert(a.tape == b.tape);
  return detail::binary_op<T>(
      a, b, kernels::add(a.value(), b.value()), [](const Tensor<T>& dy) { return dy; },
      [](const Tensor<T>& dy) { return dy; });
}

template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
  assert(a.tape == b.tape);
  return detail::binary_op<T>(
      a, b, kernels::sub(a.value(), b.value()), [](const Tensor<T>& dy) { return dy; },
      [](const Tensor<T>& dy) { return kernels::scale(dy, T(-1)); });
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  assert(a.tape == b.tape);
  Tensor<T> av = a.value(), bv = b.value();
  return detail::binary_op<T>(
      a, b, kernels::mul(av, bv), [bv](const Tensor<T>& dy) { return kernels::mul(dy, bv); },
      [av](const Tensor<T>& dy) { return kernels::mul(dy, av); });
}

template <typename T>
Var<T> scale(Var<T> a, T c) {
  return detail::unary_op<T>(a, kernels::scale(a.value(), c),
                             [c](const Tensor<T>& dy) { return kernels::scale(dy, c); });
}

template <typename T>
Var<T> add_scalar(Var<T> a, T c) {
  return detail::unary_op<T>(a, kernels::add_scalar(a.value(), c),
                             [](const Tensor<T>& dy) { return dy; });
}

// relu'(0) = 0
template <typename T>
Var<T> relu(Var<T> a) {
  Tensor<T> av = a.value();
  return detail::unary_op<T>(a, kernels::relu(av), [av](const Tensor<T>& dy) {
    return kernels::relu_backward(av, dy);
  });
}

// abs'(0) = 0 via sign(0) = 0
template <typename T>
Var<T> abs(Var<T> a) {
  Tensor<T> av = a.value();
  return detail::unary_op<T>(a, kernels::abs_val(av), [av](const Tensor<T>& dy) {
    return kernels::mul(dy, kernels::sign(av));
  });
}

template <typename T>
Var<T> square(Var<T> a) {
  Tensor<T> av = a.value();
  return detail::unary_op<T>(a, kernels::square(av), [av](const Tensor<T>& dy) {
    return kernels::mul(dy, kernels::scale(av, T(2)));
  });
}

template <typename T>
Var<T> sigmoid(Var<T> a) {
  Tensor<T> out = kernels::sigmoid(a.value());
  return detail::unary_op<T>(a, out, [out](const Tensor<T>& dy) {
    return kernels::sigmoid_backward(out, dy);
  });
}

template <typename T>
Var<T> sum(Var<T> a) {
  std::vector<int> shape = a.value().shape();
  return detail::unary_op<T>(a, kernels::sum(a.value()), [shape](const Tensor<T>& dy) {
    return Tensor<T>::full(shape, dy.item());
  });
}

template <typename T>
Var<T> mean(Var<T> a) {
  std::vector<int> shape = a.value().shape();
  const T inv = T(1) / static_cast<T>(a.value().numel());
  return detail::unary_op<T>(a, kernels::mean(a.value()), [shape, inv](const Tensor<T>& dy) {
    return Tensor<T>::full(shape, dy.item() * inv);
  });
}

template <typename T>
Var<T> add_rowwise(Var<T> x, Var<T> v) {
  assert(x.tape == v.tape);
  return detail::binary_op<T>(
      x, v, kernels::add_rowwise(x.value(), v.value()),
      [](const Tensor<T>& dy) { return dy; },
      [](const Tensor<T>& dy) { return kernels::sum_rows(dy); });
}

template <typename T>
Var<T> mul_rowwise(Var<T> x, Var<T> v) {
  assert(x.tape == v.tape);
  Tensor<T> xv = x.value(), vv = v.value();
  return detail::binary_op<T>(
      x, v, kernels::mul_rowwise(xv, vv),
      [vv](const Tensor<T>& dy) { return kernels::mul_rowwise(dy, vv); },
      [xv](const Tensor<T>& dy) { return kernels::sum_rows(kernels::mul(dy, xv)); });
}

template <typename T>
Var<T> reshape(Var<T> a, std::vector<int> new_shape) {
  std::vector<int> old_shape = a.value().shape();
  return detail::unary_op<T>(a, a.value().reshape(std::move(new_shape)),
                             [old_shape](const Tensor<T>& dy) { return dy.reshape(old_shape); });
}

// Per-example cross entropy of softmax(logits) against integer labels,
// computed with max subtraction. Returns a [batch] vector of losses.
template <typename T>
Var<T> softmax_cross_entropy(Var<T> logits, std::vector<int> labels) {
  Tape<T>& t = *logits.tape;
  auto [losses, soft] = kernels::softmax_xent(logits.value(), labels);
  const bool needs = t.needs_grad(logits.id);
  typename Tape<T>::Backprop bp;
  if (needs) {
    const int lid = logits.id;
    bp = [soft = soft, labels = std::move(labels), lid](Tape<T>& tp, int self) {
      const Tensor<T>& dl = tp.grad(self);
      const int rows = soft.dim(0), n = soft.dim(1);
      Tensor<T> dlogits = Tensor<T>::zeros({rows, n});
      T* out = dlogits.mutable_data();
      const T* sp = soft.data();
      const T* gp = dl.data();
      for (int r = 0; r < rows; ++r) {
        const T g = gp[r];
        const int y = labels[static_cast<std::size_t>(r)];
        for (int j = 0; j < n; ++j) {
          T delta = sp[r * n + j] - (j == y ? T(1) : T(0));
          out[r * n + j] = g * delta;
        }
      }
      tp.accumulate(lid, dlogits);
    };
  }
  return t.record(std::move(losses), needs, std::move(bp));
}

template <typename T>
Var<T> operator+(Var<T> a, Var<T> b) {
  return add(a, b);
}
template <typename T>
Var<T> operator-(Var<T> a, Var<T> b) {
  return sub(a, b);
}
template <typename T>
Var<T> operator*(Var<T> a, Var<T> b) {
  return mul(a, b);
}

}  // namespace ibp
