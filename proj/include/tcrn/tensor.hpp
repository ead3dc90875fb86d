#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

#include "tcrn/rng.hpp"

namespace tcrn {

/// Dense row-major real array of rank 1..3. The value type is the template
/// parameter: double for verification paths, float for training throughput.
/// All operations use a fixed loop order so results are reproducible bit for
/// bit at a given precision.
template <class Scalar>
class Tensor {
  static_assert(std::is_floating_point_v<Scalar>);

 public:
  Tensor() = default;

  explicit Tensor(std::vector<std::size_t> shape) : shape_(std::move(shape)) {
    if (shape_.empty() || shape_.size() > 3)
      throw std::invalid_argument("Tensor: rank must be 1..3");
    std::size_t n = 1;
    for (std::size_t e : shape_) n *= e;
    data_.assign(n, Scalar(0));
  }

  Tensor(std::initializer_list<std::size_t> shape)
      : Tensor(std::vector<std::size_t>(shape)) {}

  static Tensor from_values(std::initializer_list<std::size_t> shape,
                            std::initializer_list<Scalar> values) {
    Tensor t{std::vector<std::size_t>(shape)};
    if (t.size() != values.size())
      throw std::invalid_argument("Tensor::from_values: size mismatch");
    std::size_t i = 0;
    for (Scalar v : values) t.data_[i++] = v;
    return t;
  }

  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t extent(std::size_t axis) const { return shape_.at(axis); }
  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  Scalar& operator[](std::size_t flat) { return data_[flat]; }
  const Scalar& operator[](std::size_t flat) const { return data_[flat]; }

  Scalar& operator()(std::size_t i) { return data_[i]; }
  const Scalar& operator()(std::size_t i) const { return data_[i]; }
  Scalar& operator()(std::size_t i, std::size_t j) {
    return data_[i * shape_[1] + j];
  }
  const Scalar& operator()(std::size_t i, std::size_t j) const {
    return data_[i * shape_[1] + j];
  }
  Scalar& operator()(std::size_t i, std::size_t j, std::size_t k) {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }
  const Scalar& operator()(std::size_t i, std::size_t j, std::size_t k) const {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }

  Scalar* data() { return data_.data(); }
  const Scalar* data() const { return data_.data(); }
  auto begin() { return data_.begin(); }
  auto end() { return data_.end(); }
  auto begin() const { return data_.begin(); }
  auto end() const { return data_.end(); }

  void fill(Scalar v) {
    for (Scalar& x : data_) x = v;
  }

  bool all_finite() const {
    for (Scalar x : data_)
      if (!std::isfinite(x)) return false;
    return true;
  }

  void fill_uniform(Rng& rng, Scalar lo, Scalar hi) {
    for (Scalar& x : data_)
      x = static_cast<Scalar>(rng.uniform(static_cast<double>(lo),
                                          static_cast<double>(hi)));
  }

 private:
  std::vector<std::size_t> shape_;
  std::vector<Scalar> data_;
};

/// Throws if any element is NaN or Inf; `what` names the producing operation.
template <class Scalar>
void require_finite(const Tensor<Scalar>& t, const char* what) {
  if (!t.all_finite())
    throw std::runtime_error(std::string(what) + ": non-finite values");
}

/// Dense product with a fixed (i, j, k) loop order; results are bit-identical
/// across runs for a given precision.
template <class Scalar>
Tensor<Scalar> matmul(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.extent(1) != b.extent(0))
    throw std::invalid_argument("matmul: shape mismatch");
  const std::size_t m = a.extent(0), k = a.extent(1), n = b.extent(1);
  Tensor<Scalar> out{{m, n}};
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      Scalar acc = 0;
      for (std::size_t p = 0; p < k; ++p) acc += a(i, p) * b(p, j);
      out(i, j) = acc;
    }
  return out;
}

template <class Scalar>
Scalar dot(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  if (a.size() != b.size()) throw std::invalid_argument("dot: size mismatch");
  Scalar acc = 0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

template <class Scalar>
Scalar sum(const Tensor<Scalar>& a) {
  Scalar acc = 0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i];
  return acc;
}

template <class Scalar>
Scalar max_abs(const Tensor<Scalar>& a) {
  Scalar best = 0;
  for (std::size_t i = 0; i < a.size(); ++i)
    best = std::max(best, std::abs(a[i]));
  return best;
}

template <class Scalar>
void add_inplace(Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  if (a.size() != b.size())
    throw std::invalid_argument("add_inplace: size mismatch");
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
}

template <class Scalar>
void scale_inplace(Tensor<Scalar>& a, Scalar s) {
  for (std::size_t i = 0; i < a.size(); ++i) a[i] *= s;
}

template <class To, class From>
Tensor<To> cast(const Tensor<From>& a) {
  Tensor<To> out{a.shape()};
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = static_cast<To>(a[i]);
  return out;
}

}  // namespace tcrn
