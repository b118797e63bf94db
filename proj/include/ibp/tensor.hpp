#pragma once

#include <cassert>
#include <cstdint>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "ibp/error.hpp"

namespace ibp {

inline std::string shape_to_string(const std::vector<int>& shape) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << "x";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

// Dense row-major tensor. Values are treated as immutable once published:
// copies share storage, and mutable_data() is only used while a tensor is
// being filled in by its creator.
template <typename T>
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(std::vector<int> shape) {
    return Tensor(std::move(shape), T(0));
  }

  static Tensor full(std::vector<int> shape, T v) {
    return Tensor(std::move(shape), v);
  }

  static Tensor from_vector(std::vector<int> shape, std::vector<T> values) {
    Tensor t;
    t.shape_ = std::move(shape);
    t.check_shape();
    if (t.numel() != static_cast<std::int64_t>(values.size())) {
      throw ShapeError("tensor data length " + std::to_string(values.size()) +
                       " does not match shape " + shape_to_string(t.shape_));
    }
    t.data_ = std::make_shared<std::vector<T>>(std::move(values));
    return t;
  }

  static Tensor scalar(T v) { return full({1}, v); }

  bool defined() const { return data_ != nullptr; }
  const std::vector<int>& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_[static_cast<std::size_t>(i)]; }

  std::int64_t numel() const {
    std::int64_t n = 1;
    for (int d : shape_) n *= d;
    return shape_.empty() && !data_ ? 0 : n;
  }

  const T* data() const { return data_->data(); }

  // Construction-phase access; callers must not mutate a tensor that has
  // already been handed out.
  T* mutable_data() { return data_->data(); }

  T item() const {
    if (numel() != 1) {
      throw ShapeError("item() on tensor of shape " + shape_to_string(shape_));
    }
    return (*data_)[0];
  }

  T at(std::initializer_list<int> idx) const {
    assert(static_cast<int>(idx.size()) == rank());
    std::int64_t off = 0;
    auto it = idx.begin();
    for (int d = 0; d < rank(); ++d, ++it) {
      assert(*it >= 0 && *it < shape_[static_cast<std::size_t>(d)]);
      off = off * shape_[static_cast<std::size_t>(d)] + *it;
    }
    return (*data_)[static_cast<std::size_t>(off)];
  }

  // Shape-only view; shares storage.
  Tensor reshape(std::vector<int> new_shape) const {
    Tensor t;
    t.shape_ = std::move(new_shape);
    t.check_shape();
    std::int64_t n = 1;
    for (int d : t.shape_) n *= d;
    if (n != numel()) {
      throw ShapeError("cannot reshape " + shape_to_string(shape_) + " to " +
                       shape_to_string(t.shape_));
    }
    t.data_ = data_;
    return t;
  }

  Tensor clone() const {
    Tensor t;
    t.shape_ = shape_;
    t.data_ = std::make_shared<std::vector<T>>(*data_);
    return t;
  }

  std::vector<T> to_vector() const { return *data_; }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> out(static_cast<std::size_t>(numel()));
    const T* src = data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<U>(src[i]);
    return Tensor<U>::from_vector(shape_, std::move(out));
  }

 private:
  Tensor(std::vector<int> shape, T fill) : shape_(std::move(shape)) {
    check_shape();
    data_ = std::make_shared<std::vector<T>>(static_cast<std::size_t>(numel()), fill);
  }

  void check_shape() const {
    if (shape_.empty()) throw ShapeError("tensor shape must have at least one dimension");
    for (int d : shape_) {
      if (d <= 0) throw ShapeError("tensor dimensions must be positive, got " + shape_to_string(shape_));
    }
  }

  std::vector<int> shape_;
  std::shared_ptr<std::vector<T>> data_;
};

inline void require_same_shape(const std::vector<int>& a, const std::vector<int>& b,
                               const char* op) {
  if (a != b) {
    throw ShapeError(std::string(op) + ": operand shapes " + shape_to_string(a) + " and " +
                     shape_to_string(b) + " do not match");
  }
}

}  // namespace ibp
