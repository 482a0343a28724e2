#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

#include "deco/params.hpp"

namespace deco {

struct AdamWConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

/// First/second moment accumulators plus the step counter.
template <typename T>
struct OptimizerState {
  AdamWConfig config;
  ParameterStore<T> m;
  ParameterStore<T> v;
  std::uint64_t step = 0;

  static OptimizerState for_params(const ParameterStore<T>& params, AdamWConfig cfg = {}) {
    return OptimizerState{cfg, params.zeros_like(), params.zeros_like(), 0};
  }
};

/// One decoupled-weight-decay Adam step with bias correction.
template <typename T>
void adamw_step(ParameterStore<T>& params, const ParameterStore<T>& grads, OptimizerState<T>& state) {
  const AdamWConfig& c = state.config;
  if (!(c.lr > 0)) throw std::invalid_argument("adamw: learning rate must be positive");
  if (grads.size() != params.size() || state.m.size() != params.size() || state.v.size() != params.size()) {
    throw shape_error("adamw: parameter, gradient and moment counts differ");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (grads.name(i) != params.name(i) || grads[i].shape() != params[i].shape() || state.m[i].shape() != params[i].shape()) {
      throw shape_error("adamw: gradient for '" + params.name(i) + "' does not align with the parameter");
    }
    if (!grads[i].all_finite()) throw numeric_error("adamw: non-finite gradient for parameter '" + params.name(i) + "'");
  }
  const std::uint64_t t = state.step + 1;
  const double bc1 = 1.0 - std::pow(c.beta1, double(t));
  const double bc2 = 1.0 - std::pow(c.beta2, double(t));
  const double decay = 1.0 - c.lr * c.weight_decay;
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto p = params[i].data();
    auto g = grads[i].data();
    auto m = state.m[i].data();
    auto v = state.v[i].data();
    for (std::size_t j = 0; j < p.size(); ++j) {
      const double gj = g[j];
      m[j] = T(c.beta1 * m[j] + (1.0 - c.beta1) * gj);
      v[j] = T(c.beta2 * v[j] + (1.0 - c.beta2) * gj * gj);
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      p[j] = T(p[j] * decay - c.lr * mhat / (std::sqrt(vhat) + c.eps));
    }
  }
  state.step = t;
}

/// Global L2 norm clipping; returns the pre-clip norm.
template <typename T>
double clip_grad_norm(ParameterStore<T>& grads, double max_norm) {
  double sq = 0;
  for (std::size_t i = 0; i < grads.size(); ++i)
    for (T g : grads[i].data()) sq += double(g) * double(g);
  const double norm = std::sqrt(sq);
  if (max_norm > 0 && norm > max_norm) {
    const T s = T(max_norm / (norm + 1e-12));
    for (std::size_t i = 0; i < grads.size(); ++i) grads[i] *= s;
  }
  return norm;
}

/// Exponential moving average of the parameters.
template <typename T>
struct EmaShadow {
  double decay = 0.9999;
  ParameterStore<T> shadow;

  static EmaShadow from(const ParameterStore<T>& params, double decay = 0.9999) { return EmaShadow{decay, params}; }
};

template <typename T>
void ema_update(EmaShadow<T>& ema, const ParameterStore<T>& params) {
  if (ema.shadow.size() != params.size()) throw shape_error("ema: shadow and parameter counts differ");
  const double d = ema.decay;
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (ema.shadow[i].shape() != params[i].shape()) throw shape_error("ema: shape mismatch for '" + params.name(i) + "'");
    auto s = ema.shadow[i].data();
    auto p = params[i].data();
    for (std::size_t j = 0; j < s.size(); ++j) s[j] = T(d * s[j] + (1.0 - d) * p[j]);
  }
}

}  // namespace deco
