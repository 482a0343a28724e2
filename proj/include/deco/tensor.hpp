#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <new>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace deco {

using Shape = std::vector<std::size_t>;

/// Raised when operand extents are incompatible with an operation.
class shape_error : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when a computation produces or receives non-finite values.
class numeric_error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

/// Row-major strides in elements.
inline std::vector<std::size_t> strides_of(const Shape& shape) {
  std::vector<std::size_t> s(shape.size(), 1);
  for (std::size_t i = shape.size(); i-- > 1;) s[i - 1] = s[i] * shape[i];
  return s;
}

/// Allocator with a fixed 64-byte alignment. Vectorized kernels peel loops according to
/// buffer alignment, so a fixed alignment keeps floating-point results independent of
/// where the heap happens to place a buffer.
template <typename T>
struct aligned_allocator {
  using value_type = T;
  static constexpr std::align_val_t alignment{64};

  aligned_allocator() noexcept = default;
  template <typename U>
  aligned_allocator(const aligned_allocator<U>&) noexcept {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), alignment)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, alignment); }

  template <typename U>
  bool operator==(const aligned_allocator<U>&) const noexcept {
    return true;
  }
};

template <typename T>
using aligned_vector = std::vector<T, aligned_allocator<T>>;

/// Dense row-major n-dimensional array. A rank-0 tensor holds one element.
template <typename T>
class basic_tensor {
 public:
  using value_type = T;

  basic_tensor() : data_(1, T(0)) {}

  explicit basic_tensor(Shape shape, T fill = T(0)) : shape_(std::move(shape)), data_(numel(shape_), fill) {}

  basic_tensor(Shape shape, std::initializer_list<T> data) : basic_tensor(std::move(shape), aligned_vector<T>(data)) {}

  basic_tensor(Shape shape, const std::vector<T>& data) : basic_tensor(std::move(shape), aligned_vector<T>(data.begin(), data.end())) {}

  basic_tensor(Shape shape, aligned_vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != numel(shape_)) {
      throw shape_error("tensor: data length " + std::to_string(data_.size()) + " does not match shape " +
                        shape_str(shape_));
    }
  }

  static basic_tensor zeros(Shape shape) { return basic_tensor(std::move(shape), T(0)); }
  static basic_tensor ones(Shape shape) { return basic_tensor(std::move(shape), T(1)); }
  static basic_tensor full(Shape shape, T v) { return basic_tensor(std::move(shape), v); }
  static basic_tensor scalar(T v) { return basic_tensor(Shape{}, aligned_vector<T>{v}); }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }

  std::span<T> data() noexcept { return data_; }
  std::span<const T> data() const noexcept { return data_; }
  aligned_vector<T>& storage() noexcept { return data_; }
  const aligned_vector<T>& storage() const noexcept { return data_; }

  T& operator[](std::size_t i) noexcept { return data_[i]; }
  const T& operator[](std::size_t i) const noexcept { return data_[i]; }

  T& at(std::initializer_list<std::size_t> idx) { return data_[offset(idx)]; }
  const T& at(std::initializer_list<std::size_t> idx) const { return data_[offset(idx)]; }

  T item() const {
    if (data_.size() != 1) throw shape_error("tensor: item() on shape " + shape_str(shape_));
    return data_[0];
  }

  basic_tensor reshape(Shape shape) const& {
    check_reshape(shape);
    return basic_tensor(std::move(shape), data_);
  }
  basic_tensor reshape(Shape shape) && {
    check_reshape(shape);
    shape_ = std::move(shape);
    return std::move(*this);
  }

  template <typename U>
  basic_tensor<U> cast() const {
    aligned_vector<U> out(data_.begin(), data_.end());
    return basic_tensor<U>(shape_, std::move(out));
  }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  basic_tensor& operator+=(const basic_tensor& o) {
    check_same(o, "operator+=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
  }
  basic_tensor& operator-=(const basic_tensor& o) {
    check_same(o, "operator-=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= o.data_[i];
    return *this;
  }
  basic_tensor& operator*=(T s) {
    for (auto& v : data_) v *= s;
    return *this;
  }

  friend basic_tensor operator+(basic_tensor a, const basic_tensor& b) { return a += b; }
  friend basic_tensor operator-(basic_tensor a, const basic_tensor& b) { return a -= b; }
  friend basic_tensor operator*(basic_tensor a, T s) { return a *= s; }
  friend basic_tensor operator*(T s, basic_tensor a) { return a *= s; }

  friend bool operator==(const basic_tensor& a, const basic_tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  std::size_t offset(std::initializer_list<std::size_t> idx) const {
    if (idx.size() != shape_.size()) throw shape_error("tensor: index rank mismatch for shape " + shape_str(shape_));
    std::size_t off = 0;
    std::size_t axis = 0;
    for (std::size_t i : idx) {
      if (i >= shape_[axis]) throw std::out_of_range("tensor: index out of range for shape " + shape_str(shape_));
      off = off * shape_[axis] + i;
      ++axis;
    }
    return off;
  }

  void check_reshape(const Shape& shape) const {
    if (numel(shape) != data_.size()) {
      throw shape_error("reshape: cannot view " + shape_str(shape_) + " as " + shape_str(shape));
    }
  }

  void check_same(const basic_tensor& o, const char* op) const {
    if (o.shape_ != shape_) throw shape_error(std::string(op) + ": " + shape_str(shape_) + " vs " + shape_str(o.shape_));
  }

  Shape shape_;
  aligned_vector<T> data_;
};

using Tensor = basic_tensor<double>;
using TensorF = basic_tensor<float>;

/// General axis permutation: out.shape[i] = in.shape[axes[i]].
template <typename T>
basic_tensor<T> permute(const basic_tensor<T>& x, const std::vector<std::size_t>& axes) {
  const std::size_t r = x.rank();
  if (axes.size() != r) throw shape_error("permute: axes rank mismatch for " + shape_str(x.shape()));
  std::vector<bool> seen(r, false);
  Shape out_shape(r);
  for (std::size_t i = 0; i < r; ++i) {
    if (axes[i] >= r || seen[axes[i]]) throw shape_error("permute: invalid axes for " + shape_str(x.shape()));
    seen[axes[i]] = true;
    out_shape[i] = x.shape()[axes[i]];
  }
  basic_tensor<T> out(out_shape);
  if (x.size() == 0) return out;
  const auto in_strides = strides_of(x.shape());
  std::vector<std::size_t> src_stride(r);
  for (std::size_t i = 0; i < r; ++i) src_stride[i] = in_strides[axes[i]];
  if (r == 0) {
    out[0] = x[0];
    return out;
  }
  // Odometer over output indices; the innermost axis is a strided copy.
  std::vector<std::size_t> idx(r, 0);
  const std::size_t inner = out_shape[r - 1];
  const std::size_t inner_stride = src_stride[r - 1];
  std::size_t src = 0;
  auto out_data = out.data();
  auto in_data = x.data();
  for (std::size_t o = 0; o < out.size(); o += inner) {
    const T* s = in_data.data() + src;
    T* d = out_data.data() + o;
    for (std::size_t k = 0; k < inner; ++k) d[k] = s[k * inner_stride];
    for (std::size_t a = r - 1; a-- > 0;) {
      ++idx[a];
      src += src_stride[a];
      if (idx[a] < out_shape[a]) break;
      src -= src_stride[a] * idx[a];
      idx[a] = 0;
    }
  }
  return out;
}

template <typename T>
T max_abs_diff(const basic_tensor<T>& a, const basic_tensor<T>& b) {
  if (a.shape() != b.shape()) throw shape_error("max_abs_diff: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  T m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace deco
