#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <cstring>
#include <cstddef>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "bases/errors.hpp"

namespace bases {

using Shape = std::vector<int>;

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         [](std::size_t a, int d) { return a * static_cast<std::size_t>(d); });
}

inline std::string shape_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Dense row-major tensor. `data` holds product(shape) entries.
template <typename Scalar>
struct Tensor {
  Shape shape;
  Vector<Scalar> data;

  Tensor() = default;
  explicit Tensor(Shape s) : shape(std::move(s)), data(Vector<Scalar>::Zero(shape_size(shape))) {}
  Tensor(Shape s, Vector<Scalar> d) : shape(std::move(s)), data(std::move(d)) {
    if (static_cast<std::size_t>(data.size()) != shape_size(shape)) {
      throw ShapeError("tensor data length " + std::to_string(data.size()) +
                       " does not match shape " + shape_string(shape));
    }
  }

  static Tensor zeros(Shape s) { return Tensor(std::move(s)); }

  Eigen::Index size() const { return data.size(); }
  Scalar& operator[](Eigen::Index i) { return data[i]; }
  Scalar operator[](Eigen::Index i) const { return data[i]; }

  bool all_finite() const { return data.allFinite(); }

  template <typename Other>
  Tensor<Other> cast() const {
    return Tensor<Other>(shape, data.template cast<Other>());
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape == b.shape && a.data.size() == b.data.size() &&
           (a.data.array() == b.data.array()).all();
  }
};

using ImageTensor = Tensor<float>;

/// Bitwise comparison; distinguishes -0 from +0 and compares NaN payloads.
template <typename Scalar>
bool bitwise_equal(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  if (a.shape != b.shape) return false;
  return std::memcmp(a.data.data(), b.data.data(), sizeof(Scalar) * a.data.size()) == 0;
}

/// FNV-1a over the raw little-endian bytes of the tensor payload.
inline std::uint64_t digest(const Tensor<float>& t) {
  std::uint64_t h = 1469598103934665603ULL;
  const auto* bytes = reinterpret_cast<const unsigned char*>(t.data.data());
  for (std::size_t i = 0; i < sizeof(float) * static_cast<std::size_t>(t.data.size()); ++i) {
    h ^= bytes[i];
    h *= 1099511628211ULL;
  }
  return h;
}

/// Index of the largest entry; ties go to the lowest index.
template <typename Derived>
Eigen::Index argmax(const Eigen::MatrixBase<Derived>& v) {
  Eigen::Index best = 0;
  for (Eigen::Index i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = i;
  }
  return best;
}

template <typename Derived>
Eigen::Index argmin(const Eigen::MatrixBase<Derived>& v) {
  Eigen::Index best = 0;
  for (Eigen::Index i = 1; i < v.size(); ++i) {
    if (v[i] < v[best]) best = i;
  }
  return best;
}

}  // namespace bases
