#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "plato/errors.hpp"

namespace plato {

// Dense row-major tensor. Everything in this library is at most 2-D; a 1-D
// tensor of length n behaves as a 1 x n row where a matrix is expected.
template <typename Real>
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<Real> data;

  Tensor() = default;

  explicit Tensor(std::vector<std::size_t> dims, Real fill = Real(0))
      : shape(std::move(dims)), data(element_count(shape), fill) {}

  Tensor(std::vector<std::size_t> dims, std::vector<Real> values)
      : shape(std::move(dims)), data(std::move(values)) {
    require(data.size() == element_count(shape), "tensor data length does not match shape");
  }

  static std::size_t element_count(const std::vector<std::size_t>& dims) {
    return std::accumulate(dims.begin(), dims.end(), std::size_t{1}, std::multiplies<>());
  }

  std::size_t size() const { return data.size(); }
  std::size_t rows() const { return shape.size() < 2 ? 1 : shape[0]; }
  std::size_t cols() const {
    if (shape.empty()) return 1;
    return shape.size() == 1 ? shape[0] : shape[1];
  }

  Real& at(std::size_t r, std::size_t c) { return data[r * cols() + c]; }
  Real at(std::size_t r, std::size_t c) const { return data[r * cols() + c]; }

  bool all_finite() const {
    for (Real v : data)
      if (!std::isfinite(v)) return false;
    return true;
  }

  template <typename Other>
  Tensor<Other> cast() const {
    Tensor<Other> out;
    out.shape = shape;
    out.data.assign(data.begin(), data.end());
    return out;
  }
};

inline std::string shape_string(const std::vector<std::size_t>& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

}  // namespace plato
