#pragma once

#include <algorithm>
#include <cassert>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "lcnn/error.hpp"
#include "lcnn/rng.hpp"

namespace lcnn {

template <typename T>
concept Real = std::floating_point<T>;

/// Ordered list of positive extents. Row-major, NHWC for image tensors.
class Shape {
 public:
  Shape() = default;
  Shape(std::initializer_list<std::size_t> dims) : dims_(dims) { validate(); }
  explicit Shape(std::vector<std::size_t> dims) : dims_(std::move(dims)) { validate(); }

  std::size_t rank() const noexcept { return dims_.size(); }
  std::size_t operator[](std::size_t i) const { return dims_.at(i); }
  std::size_t back() const { return dims_.back(); }
  const std::vector<std::size_t>& dims() const noexcept { return dims_; }

  std::size_t numel() const noexcept {
    return std::accumulate(dims_.begin(), dims_.end(), std::size_t{1}, std::multiplies<>{});
  }

  std::size_t flatten(std::span<const std::size_t> index) const {
    if (index.size() != dims_.size()) throw ShapeError("flatten: rank mismatch");
    std::size_t offset = 0;
    for (std::size_t i = 0; i < dims_.size(); ++i) {
      if (index[i] >= dims_[i]) throw ShapeError("flatten: index out of range");
      offset = offset * dims_[i] + index[i];
    }
    return offset;
  }

  std::vector<std::size_t> unflatten(std::size_t offset) const {
    if (offset >= numel()) throw ShapeError("unflatten: offset out of range");
    std::vector<std::size_t> index(dims_.size());
    for (std::size_t i = dims_.size(); i-- > 0;) {
      index[i] = offset % dims_[i];
      offset /= dims_[i];
    }
    return index;
  }

  std::string str() const {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < dims_.size(); ++i) os << (i ? "x" : "") << dims_[i];
    os << ']';
    return os.str();
  }

  friend bool operator==(const Shape&, const Shape&) = default;

 private:
  void validate() const {
    if (dims_.empty()) throw ShapeError("shape must have rank >= 1");
    for (auto d : dims_)
      if (d == 0) throw ShapeError("shape extents must be >= 1");
  }

  std::vector<std::size_t> dims_;
};

/// Heap storage aligned to Eigen's widest packet. Vectorized reductions then
/// split head/body the same way on every run, which keeps results bit-stable.
template <typename T>
using AlignedVector = std::vector<T, Eigen::aligned_allocator<T>>;

/// Dense row-major tensor with value semantics.
template <Real T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T value = T{0}) : shape_(std::move(shape)), data_(shape_.numel(), value) {}
  Tensor(Shape shape, AlignedVector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != shape_.numel()) throw ShapeError("tensor data length does not match shape " + shape_.str());
  }
  Tensor(Shape shape, const std::vector<T>& data) : Tensor(std::move(shape), AlignedVector<T>(data.begin(), data.end())) {}

  const Shape& shape() const noexcept { return shape_; }
  std::size_t size() const noexcept { return data_.size(); }
  std::size_t dim(std::size_t i) const { return shape_[i]; }
  bool empty() const noexcept { return data_.empty(); }

  T* data() noexcept { return data_.data(); }
  const T* data() const noexcept { return data_.data(); }
  std::span<T> values() noexcept { return data_; }
  std::span<const T> values() const noexcept { return data_; }
  AlignedVector<T>& storage() noexcept { return data_; }
  const AlignedVector<T>& storage() const noexcept { return data_; }
  std::vector<T> to_vector() const { return {data_.begin(), data_.end()}; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  template <typename... I>
  T& at(I... idx) {
    const std::size_t index[] = {static_cast<std::size_t>(idx)...};
    return data_[shape_.flatten(index)];
  }
  template <typename... I>
  const T& at(I... idx) const {
    const std::size_t index[] = {static_cast<std::size_t>(idx)...};
    return data_[shape_.flatten(index)];
  }

  /// Same data, new shape of equal element count.
  Tensor reshaped(Shape shape) const& {
    if (shape.numel() != size()) throw ShapeError("reshape " + shape_.str() + " -> " + shape.str());
    return Tensor(std::move(shape), data_);
  }
  Tensor reshaped(Shape shape) && {
    if (shape.numel() != size()) throw ShapeError("reshape " + shape_.str() + " -> " + shape.str());
    return Tensor(std::move(shape), std::move(data_));
  }

  void fill(T value) { std::fill(data_.begin(), data_.end(), value); }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
  }

  template <Real U>
  Tensor<U> cast() const {
    return Tensor<U>(shape_, AlignedVector<U>(data_.begin(), data_.end()));
  }

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape shape_;
  AlignedVector<T> data_;
};

#ifndef NDEBUG
#define LCNN_CHECK_FINITE(t) assert((t).all_finite() && "non-finite value in tensor")
#else
#define LCNN_CHECK_FINITE(t) ((void)0)
#endif

template <Real T>
Tensor<T> tensor_fill(const Shape& shape, T value) {
  return Tensor<T>(shape, value);
}

struct Uniform {
  double a = 0.0;
  double b = 1.0;
};
struct Normal {
  double mu = 0.0;
  double sigma = 1.0;
};

template <Real T>
Tensor<T> tensor_random(const Shape& shape, Uniform dist, Rng& rng) {
  if (!(dist.a < dist.b)) throw std::invalid_argument("tensor_random: uniform requires a < b");
  Tensor<T> t(shape);
  for (auto& v : t.values()) v = static_cast<T>(rng.uniform(dist.a, dist.b));
  return t;
}

template <Real T>
Tensor<T> tensor_random(const Shape& shape, Normal dist, Rng& rng) {
  if (!(dist.sigma > 0)) throw std::invalid_argument("tensor_random: normal requires sigma > 0");
  Tensor<T> t(shape);
  for (auto& v : t.values()) v = static_cast<T>(rng.normal(dist.mu, dist.sigma));
  return t;
}

enum class ElementwiseOp { add, sub, mul, max, scale };

namespace detail {
template <Real T>
T apply(ElementwiseOp op, T a, T b) {
  switch (op) {
    case ElementwiseOp::add: return a + b;
    case ElementwiseOp::sub: return a - b;
    case ElementwiseOp::mul:
    case ElementwiseOp::scale: return a * b;
    case ElementwiseOp::max: return std::max(a, b);
  }
  return a;
}
}  // namespace detail

template <Real T>
Tensor<T> elementwise(ElementwiseOp op, const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape())
    throw ShapeError("elementwise: shape mismatch " + a.shape().str() + " vs " + b.shape().str());
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = detail::apply(op, a[i], b[i]);
  return out;
}

template <Real T>
Tensor<T> elementwise(ElementwiseOp op, const Tensor<T>& a, T scalar) {
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = detail::apply(op, a[i], scalar);
  return out;
}

template <Real T>
using MatrixMap = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <Real T>
using ConstMatrixMap = Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

template <Real T>
ConstMatrixMap<T> as_matrix(const T* p, std::size_t rows, std::size_t cols) {
  return ConstMatrixMap<T>(p, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}
template <Real T>
MatrixMap<T> as_matrix(T* p, std::size_t rows, std::size_t cols) {
  return MatrixMap<T>(p, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

/// [M x K] * [K x N] -> [M x N]. Eigen provides the blocked kernel.
template <Real T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape().rank() != 2 || b.shape().rank() != 2) throw ShapeError("matmul: rank-2 operands required");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) throw ShapeError("matmul: inner dims " + a.shape().str() + " x " + b.shape().str());
  Tensor<T> out(Shape{m, n});
  as_matrix(out.data(), m, n).noalias() = as_matrix(a.data(), m, k) * as_matrix(b.data(), k, n);
  return out;
}

/// Zero-pad the spatial dims of an HxWxC or BxHxWxC tensor by (k-1)/2 on each side.
template <Real T>
Tensor<T> pad2d_same(const Tensor<T>& x, std::size_t kernel_h, std::size_t kernel_w) {
  if (kernel_h % 2 == 0 || kernel_w % 2 == 0) throw std::invalid_argument("pad2d_same: even kernel extents are not supported");
  const auto rank = x.shape().rank();
  if (rank != 3 && rank != 4) throw ShapeError("pad2d_same: expected HxWxC or BxHxWxC, got " + x.shape().str());
  const std::size_t batch = rank == 4 ? x.dim(0) : 1;
  const std::size_t h = x.dim(rank - 3), w = x.dim(rank - 2), c = x.dim(rank - 1);
  const std::size_t ph = (kernel_h - 1) / 2, pw = (kernel_w - 1) / 2;
  const std::size_t hp = h + 2 * ph, wp = w + 2 * pw;
  Tensor<T> out(rank == 4 ? Shape{batch, hp, wp, c} : Shape{hp, wp, c});
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t i = 0; i < h; ++i) {
      const T* src = x.data() + ((b * h + i) * w) * c;
      T* dst = out.data() + ((b * hp + i + ph) * wp + pw) * c;
      std::copy(src, src + w * c, dst);
    }
  return out;
}

template <Real T>
double sum_squares(const Tensor<T>& t) {
  double s = 0.0;
  for (T v : t.values()) s += static_cast<double>(v) * v;
  return s;
}

}  // namespace lcnn
