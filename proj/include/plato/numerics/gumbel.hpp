#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "plato/errors.hpp"
#include "plato/numerics/autograd.hpp"
#include "plato/numerics/rng.hpp"

namespace plato {

inline constexpr double kGumbelUniformFloor = 1e-20;
inline constexpr double kGumbelUniformCeil = 1.0 - 1e-7;

// K draws of standard Gumbel noise, -log(-log(u)) with u clamped away from
// {0, 1}.
inline std::vector<double> gumbel_noise(std::size_t k, RngStream& rng) {
  std::vector<double> g(k);
  for (auto& x : g) {
    const double u = std::clamp(rng.uniform(), kGumbelUniformFloor, kGumbelUniformCeil);
    x = -std::log(-std::log(u));
  }
  return g;
}

namespace detail {
template <typename Real>
void check_gumbel_inputs(const std::vector<Real>& logits, double temperature) {
  require(logits.size() >= 2, "gumbel_softmax: need at least two categories");
  if (!(temperature > 0.0)) throw ConfigError("gumbel_softmax: temperature must be positive");
  for (Real v : logits)
    if (!std::isfinite(v)) throw NumericError("gumbel_softmax: non-finite logit");
}
}  // namespace detail

// softmax((logits + noise) / temperature) as a graph node; the noise is a
// constant so gradients flow to the logits only.
template <typename Real>
Var<Real> gumbel_softmax(const Var<Real>& logits, double temperature,
                         const std::vector<double>& noise) {
  detail::check_gumbel_inputs(logits->value.data, temperature);
  require(noise.size() == logits->value.size(), "gumbel_softmax: noise length mismatch");
  Tensor<Real> g({1, noise.size()});
  for (std::size_t i = 0; i < noise.size(); ++i) g.data[i] = Real(noise[i]);
  auto shifted = ag::add(logits, ag::constant(std::move(g)));
  return ag::softmax_rows(ag::scale(shifted, Real(1.0 / temperature)));
}

// Soft (relaxed) categorical sample over K latent values.
template <typename Real>
Var<Real> gumbel_softmax_sample(const Var<Real>& logits, double temperature, RngStream& rng) {
  detail::check_gumbel_inputs(logits->value.data, temperature);
  return gumbel_softmax(logits, temperature, gumbel_noise(logits->value.size(), rng));
}

inline std::vector<double> gumbel_softmax_sample(const std::vector<double>& logits,
                                                 double temperature, RngStream& rng) {
  NoGradGuard no_grad;
  auto x = ag::constant(Tensor<double>({1, logits.size()}, logits));
  return gumbel_softmax_sample(x, temperature, rng)->value.data;
}

}  // namespace plato
