#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <vector>

#include "plato/errors.hpp"
#include "plato/numerics/autograd.hpp"

namespace plato {

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t coordinates = 0;
  std::size_t worst_leaf = 0;
  std::size_t worst_index = 0;
};

inline double relative_gradient_error(double analytic, double numeric) {
  const double scale = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  return std::abs(analytic - numeric) / scale;
}

// Compares reverse-mode gradients of `loss` with fourth-order central
// differences, (8[f(x+h) - f(x-h)] - [f(x+2h) - f(x-2h)]) / 12h, over
// every coordinate of `leaves` (or the first `max_coords` per leaf when
// nonzero). `loss` must rebuild the graph from the current leaf values on
// each call and be deterministic.
inline GradCheckResult grad_check(const std::function<Var<double>()>& loss,
                                  const std::vector<Var<double>>& leaves, double epsilon,
                                  std::size_t max_coords = 0) {
  ag::zero_grad(leaves);
  auto value = loss();
  if (!value->value.all_finite()) throw NumericError("grad_check: non-finite loss");
  ag::backward(value);
  std::vector<std::vector<double>> analytic;
  for (const auto& leaf : leaves)
    analytic.push_back(leaf->grad.empty() ? std::vector<double>(leaf->value.size(), 0.0)
                                          : leaf->grad);
  ag::zero_grad(leaves);

  auto eval = [&]() {
    NoGradGuard no_grad;
    const double v = loss()->value.data[0];
    if (!std::isfinite(v)) throw NumericError("grad_check: non-finite loss");
    return v;
  };

  GradCheckResult result;
  for (std::size_t l = 0; l < leaves.size(); ++l) {
    auto& data = leaves[l]->value.data;
    const std::size_t n = max_coords ? std::min(max_coords, data.size()) : data.size();
    for (std::size_t i = 0; i < n; ++i) {
      const double saved = data[i];
      auto at = [&](double offset) {
        data[i] = saved + offset;
        return eval();
      };
      const double d1 = at(epsilon) - at(-epsilon);
      const double d2 = at(2.0 * epsilon) - at(-2.0 * epsilon);
      data[i] = saved;
      const double numeric = (8.0 * d1 - d2) / (12.0 * epsilon);
      const double err = relative_gradient_error(analytic[l][i], numeric);
      ++result.coordinates;
      if (err > result.max_relative_error) {
        result.max_relative_error = err;
        result.worst_leaf = l;
        result.worst_index = i;
      }
    }
  }
  return result;
}

// Single-point form: `fn` maps a leaf vector to a scalar graph.
inline double grad_check(const std::function<Var<double>(const Var<double>&)>& fn,
                         const std::vector<double>& point, double epsilon) {
  auto x = ag::parameter(Tensor<double>({point.size()}, point));
  return grad_check([&]() { return fn(x); }, {x}, epsilon).max_relative_error;
}

}  // namespace plato
