#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "tsan/core/shape.hpp"

namespace tsan {

// Dense value tensor. Autograd state (requires_grad flag, gradient buffer)
// lives on the tape node that holds the tensor during a recorded pass; the
// tensor itself is just shape + storage. Immutable by convention once handed
// to a tape.
template <typename T>
struct Tensor {
  Shape shape;
  std::vector<T> data;

  Tensor() = default;

  explicit Tensor(const Shape& s, T fill = T(0))
      : shape(s), data(static_cast<std::size_t>(s.numel()), fill) {}

  Tensor(const Shape& s, std::vector<T> values) : shape(s), data(std::move(values)) {
    contract(static_cast<std::int64_t>(data.size()) == s.numel(),
             "Tensor: data length must equal product of extents");
  }

  static Tensor zeros(const Shape& s) { return Tensor(s, T(0)); }
  static Tensor full(const Shape& s, T v) { return Tensor(s, v); }
  static Tensor scalar(T v) { return Tensor(Shape::scalar(), std::vector<T>{v}); }

  std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }

  // Rank-4 element access; no bounds checks beyond debug builds.
  T& at4(int n, int c, int h, int w) {
    return data[idx4(n, c, h, w)];
  }
  T at4(int n, int c, int h, int w) const {
    return data[idx4(n, c, h, w)];
  }

  std::size_t idx4(int n, int c, int h, int w) const {
    return static_cast<std::size_t>(
        ((static_cast<std::int64_t>(n) * shape[1] + c) * shape[2] + h) * shape[3] + w);
  }

  bool all_finite() const {
    for (T v : data)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out;
    out.shape = shape;
    out.data.resize(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
    return out;
  }
};

}  // namespace tsan
