#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <vector>

#include "plato/errors.hpp"
#include "plato/numerics/autograd.hpp"
#include "plato/numerics/tensor.hpp"

namespace plato {

// Linear warmup to `peak` at step == warmup, then inverse-square-root decay.
inline double lr_schedule(std::uint64_t step, std::uint64_t warmup, double peak) {
  require(step >= 1 && warmup >= 1, "lr_schedule: step and warmup must be positive");
  if (step <= warmup) return peak * double(step) / double(warmup);
  return peak * std::sqrt(double(warmup) / double(step));
}

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double peak_lr = 1e-3;
  std::uint64_t warmup_steps = 100;
  // Global gradient-norm clip applied before the update; 0 disables it.
  double max_grad_norm = 0.0;
};

template <typename Real>
struct OptimizerState {
  AdamConfig config;
  std::uint64_t step = 0;
  std::vector<Tensor<Real>> first_moment;
  std::vector<Tensor<Real>> second_moment;
};

namespace detail {

template <typename Real>
void adam_update(Real* param, const Real* grad, Real* m, Real* v, std::size_t n, double lr,
                 double grad_scale, const AdamConfig& c, std::uint64_t step) {
  const double bc1 = 1.0 - std::pow(c.beta1, double(step));
  const double bc2 = 1.0 - std::pow(c.beta2, double(step));
  for (std::size_t i = 0; i < n; ++i) {
    const double g = grad ? double(grad[i]) * grad_scale : 0.0;
    const double mi = c.beta1 * double(m[i]) + (1.0 - c.beta1) * g;
    const double vi = c.beta2 * double(v[i]) + (1.0 - c.beta2) * g * g;
    m[i] = Real(mi);
    v[i] = Real(vi);
    const double denom = std::sqrt(vi / bc2) + c.epsilon;
    if (denom > 0.0) param[i] -= Real(lr * (mi / bc1) / denom);
  }
}

template <typename Real>
void ensure_moments(OptimizerState<Real>& state, const std::vector<const Tensor<Real>*>& params) {
  if (state.first_moment.empty()) {
    for (const auto* p : params) {
      state.first_moment.emplace_back(p->shape);
      state.second_moment.emplace_back(p->shape);
    }
  }
  require(state.first_moment.size() == params.size(), "adam_step: parameter count changed");
  for (std::size_t i = 0; i < params.size(); ++i)
    require(state.first_moment[i].shape == params[i]->shape &&
                state.second_moment[i].shape == params[i]->shape,
            "adam_step: moment shape does not match parameter " + std::to_string(i));
}

template <typename Real>
double clip_scale(const std::vector<const std::vector<Real>*>& grads, double max_norm) {
  if (max_norm <= 0.0) return 1.0;
  double sq = 0.0;
  for (const auto* g : grads)
    if (g)
      for (Real x : *g) sq += double(x) * double(x);
  const double norm = std::sqrt(sq);
  return norm > max_norm ? max_norm / norm : 1.0;
}

}  // namespace detail

// One Adam update with bias correction; the step size is lr_schedule of the
// new step count. `grads[i]` may be empty, meaning an all-zero gradient.
template <typename Real>
void adam_step(std::vector<Tensor<Real>>& params, const std::vector<Tensor<Real>>& grads,
               OptimizerState<Real>& state) {
  require(params.size() == grads.size(), "adam_step: params/grads count mismatch");
  std::vector<const Tensor<Real>*> views;
  std::vector<const std::vector<Real>*> gviews;
  for (std::size_t i = 0; i < params.size(); ++i) {
    require(grads[i].data.empty() || grads[i].shape == params[i].shape,
            "adam_step: gradient shape mismatch at " + std::to_string(i));
    views.push_back(&params[i]);
    gviews.push_back(grads[i].data.empty() ? nullptr : &grads[i].data);
  }
  detail::ensure_moments(state, views);
  ++state.step;
  const double lr = lr_schedule(state.step, state.config.warmup_steps, state.config.peak_lr);
  const double gs = detail::clip_scale(gviews, state.config.max_grad_norm);
  for (std::size_t i = 0; i < params.size(); ++i)
    detail::adam_update(params[i].data.data(), gviews[i] ? gviews[i]->data() : nullptr,
                        state.first_moment[i].data.data(), state.second_moment[i].data.data(),
                        params[i].size(), lr, gs, state.config, state.step);
}

// In-place variant over graph leaves, reading their accumulated gradients.
template <typename Real>
void adam_step(const std::vector<Var<Real>>& params, OptimizerState<Real>& state) {
  std::vector<const Tensor<Real>*> views;
  std::vector<const std::vector<Real>*> gviews;
  for (const auto& p : params) {
    views.push_back(&p->value);
    gviews.push_back(p->grad.empty() ? nullptr : &p->grad);
  }
  detail::ensure_moments(state, views);
  ++state.step;
  const double lr = lr_schedule(state.step, state.config.warmup_steps, state.config.peak_lr);
  const double gs = detail::clip_scale(gviews, state.config.max_grad_norm);
  for (std::size_t i = 0; i < params.size(); ++i)
    detail::adam_update(params[i]->value.data.data(), gviews[i] ? gviews[i]->data() : nullptr,
                        state.first_moment[i].data.data(), state.second_moment[i].data.data(),
                        params[i]->value.size(), lr, gs, state.config, state.step);
}

}  // namespace plato
