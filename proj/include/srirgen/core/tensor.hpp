#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace srirgen {

using Shape = std::vector<std::size_t>;

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ')';
  return os.str();
}

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

// Dense row-major tensor. Extents are positive; a default-constructed tensor
// is empty and has no shape.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  explicit Tensor(Shape shape, T fill = T(0))
      : shape_(std::move(shape)), data_(checked_numel(shape_), fill) {}

  Tensor(Shape shape, std::vector<T> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != checked_numel(shape_)) {
      throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                       " does not match shape " + shape_string(shape_));
    }
  }

  const Shape& shape() const { return shape_; }
  std::size_t ndim() const { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::span<T> values() { return data_; }
  std::span<const T> values() const { return data_; }
  std::vector<T>& storage() { return data_; }
  const std::vector<T>& storage() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  auto begin() { return data_.begin(); }
  auto end() { return data_.end(); }
  auto begin() const { return data_.begin(); }
  auto end() const { return data_.end(); }

  void reshape(Shape shape) {
    if (checked_numel(shape) != data_.size()) {
      throw ShapeError("cannot reshape " + shape_string(shape_) + " to " +
                       shape_string(shape));
    }
    shape_ = std::move(shape);
  }

  Tensor reshaped(Shape shape) const {
    Tensor out = *this;
    out.reshape(std::move(shape));
    return out;
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(),
                       [](T v) { return std::isfinite(v); });
  }

  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return Tensor<U>(shape_, std::move(out));
  }

  Tensor& operator+=(const Tensor& o) {
    require_same_shape(o, "+=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
  }

  Tensor& operator*=(T s) {
    for (auto& v : data_) v *= s;
    return *this;
  }

  void require_same_shape(const Tensor& o, const char* what) const {
    if (shape_ != o.shape_) {
      throw ShapeError(std::string(what) + ": shape " + shape_string(shape_) +
                       " vs " + shape_string(o.shape_));
    }
  }

 private:
  static std::size_t checked_numel(const Shape& shape) {
    for (std::size_t e : shape) {
      if (e == 0) throw ShapeError("zero extent in shape " + shape_string(shape));
    }
    return shape_numel(shape);
  }

  Shape shape_;
  std::vector<T> data_;
};

template <typename T>
T dot(std::span<const T> a, std::span<const T> b) {
  T acc = 0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

// Concatenates along dimension 1 of two tensors with equal dim 0 and equal
// trailing extents.
template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.ndim() < 2 || a.ndim() != b.ndim() || a.dim(0) != b.dim(0)) {
    throw ShapeError("concat_channels: " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
  }
  std::size_t inner = 1;
  for (std::size_t d = 2; d < a.ndim(); ++d) {
    if (a.dim(d) != b.dim(d)) {
      throw ShapeError("concat_channels trailing extent mismatch: " +
                       shape_string(a.shape()) + " vs " +
                       shape_string(b.shape()));
    }
    inner *= a.dim(d);
  }
  Shape s = a.shape();
  s[1] = a.dim(1) + b.dim(1);
  Tensor<T> out(s);
  const std::size_t na = a.dim(1) * inner, nb = b.dim(1) * inner;
  for (std::size_t n = 0; n < a.dim(0); ++n) {
    std::copy_n(a.data() + n * na, na, out.data() + n * (na + nb));
    std::copy_n(b.data() + n * nb, nb, out.data() + n * (na + nb) + na);
  }
  return out;
}

// Inverse of concat_channels for gradients: splits dim 1 at `first`.
template <typename T>
std::pair<Tensor<T>, Tensor<T>> split_channels(const Tensor<T>& x,
                                               std::size_t first) {
  std::size_t inner = 1;
  for (std::size_t d = 2; d < x.ndim(); ++d) inner *= x.dim(d);
  Shape sa = x.shape(), sb = x.shape();
  sa[1] = first;
  sb[1] = x.dim(1) - first;
  Tensor<T> a(sa), b(sb);
  const std::size_t na = first * inner, nb = sb[1] * inner;
  for (std::size_t n = 0; n < x.dim(0); ++n) {
    std::copy_n(x.data() + n * (na + nb), na, a.data() + n * na);
    std::copy_n(x.data() + n * (na + nb) + na, nb, b.data() + n * nb);
  }
  return {std::move(a), std::move(b)};
}

}  // namespace srirgen
