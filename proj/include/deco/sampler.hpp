#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "deco/tensor.hpp"

namespace deco::sampling {

enum class Solver { euler, heun };

inline const char* to_string(Solver s) { return s == Solver::euler ? "euler" : "heun"; }
inline Solver solver_from_string(const std::string& s) {
  if (s == "euler") return Solver::euler;
  if (s == "heun") return Solver::heun;
  throw std::invalid_argument("unknown solver '" + s + "' (expected euler|heun)");
}

struct SamplerConfig {
  std::size_t steps = 100;
  Solver solver = Solver::euler;
  double cfg_scale = 1.0;
  double interval_lo = 0.1;
  double interval_hi = 1.0;
  std::uint64_t seed = 0;
  // EDM-style shortcut: take a plain Euler step on the last interval instead of predictor-corrector.
  bool heun_final_euler = false;

  std::vector<std::string> violations() const {
    std::vector<std::string> v;
    if (steps < 1) v.push_back("sampling.steps must be >= 1");
    if (cfg_scale < 1.0) v.push_back("sampling.cfg_scale must be >= 1");
    if (!(0.0 <= interval_lo && interval_lo < interval_hi && interval_hi <= 1.0))
      v.push_back("sampling.guidance_interval must satisfy 0 <= lo < hi <= 1");
    return v;
  }
};

/// Velocity field v(x, t, y). Labels may include the null class.
template <typename T>
using VelocityModel = std::function<basic_tensor<T>(const basic_tensor<T>& x, T t, std::span<const int> y)>;

/// Interval-gated classifier-free guidance.
template <typename T>
basic_tensor<T> cfg_velocity(const basic_tensor<T>& v_cond, const basic_tensor<T>& v_uncond, double s, double t, double lo, double hi) {
  if (v_cond.shape() != v_uncond.shape()) {
    throw shape_error("cfg_velocity: " + shape_str(v_cond.shape()) + " vs " + shape_str(v_uncond.shape()));
  }
  if (t < lo || t > hi) return v_cond;
  basic_tensor<T> out(v_cond.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = T(v_uncond[i] + s * (v_cond[i] - v_uncond[i]));
  return out;
}

template <typename T>
struct SampleResult {
  basic_tensor<T> state;   // x at t = 0, unclipped
  basic_tensor<T> images;  // state clipped to [-1, 1]
  std::size_t evaluations = 0;
};

namespace detail {

template <typename T>
class GuidedField {
 public:
  GuidedField(const VelocityModel<T>& model, std::span<const int> y, int null_label, const SamplerConfig& cfg)
      : model_(model), y_(y.begin(), y.end()), null_(y.size(), null_label), cfg_(cfg) {}

  /// Guided velocity at (x, t); `gate_t` decides whether guidance is active.
  basic_tensor<T> operator()(const basic_tensor<T>& x, double t, double gate_t) {
    ++evaluations;
    auto v_cond = model_(x, T(t), y_);
    if (cfg_.cfg_scale <= 1.0) return v_cond;
    ++evaluations;
    auto v_uncond = model_(x, T(t), null_);
    return cfg_velocity(v_cond, v_uncond, cfg_.cfg_scale, gate_t, cfg_.interval_lo, cfg_.interval_hi);
  }

  std::size_t evaluations = 0;

 private:
  const VelocityModel<T>& model_;
  std::vector<int> y_;
  std::vector<int> null_;
  const SamplerConfig& cfg_;
};

template <typename T>
void axpy(basic_tensor<T>& x, double a, const basic_tensor<T>& v) {
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = T(x[i] + a * v[i]);
}

template <typename T>
SampleResult<T> finish(basic_tensor<T> x, std::size_t evals) {
  SampleResult<T> r;
  r.images = x;
  for (auto& v : r.images.data()) v = std::clamp(v, T(-1), T(1));
  r.state = std::move(x);
  r.evaluations = evals;
  return r;
}

}  // namespace detail

/// Integrates dx/dt = v from t = 1 to t = 0 on a uniform grid starting at x1.
template <typename T>
SampleResult<T> integrate(const VelocityModel<T>& model, basic_tensor<T> x, std::span<const int> y, int null_label,
                          const SamplerConfig& cfg) {
  if (auto v = cfg.violations(); !v.empty()) throw std::invalid_argument("sampler: " + v.front());
  detail::GuidedField<T> field(model, y, null_label, cfg);
  const std::size_t n = cfg.steps;
  const double dt = 1.0 / double(n);
  for (std::size_t k = n; k >= 1; --k) {
    const double t = double(k) / double(n);
    const double t_next = double(k - 1) / double(n);
    auto v = field(x, t, t);
    const bool last = k == 1;
    if (cfg.solver == Solver::euler || (last && cfg.heun_final_euler)) {
      detail::axpy(x, -dt, v);
      continue;
    }
    basic_tensor<T> pred = x;
    detail::axpy(pred, -dt, v);
    auto v2 = field(pred, t_next, t);
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = T(x[i] - 0.5 * dt * (double(v[i]) + double(v2[i])));
  }
  return detail::finish(std::move(x), field.evaluations);
}

/// Draws x1 ~ N(0, 1) of shape [B, H, W, C] from cfg.seed.
template <typename T>
basic_tensor<T> initial_noise(std::size_t batch, std::size_t h, std::size_t w, std::size_t c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  basic_tensor<T> x({batch, h, w, c});
  for (auto& v : x.data()) v = T(normal(rng));
  return x;
}

template <typename T>
SampleResult<T> euler_sample(const VelocityModel<T>& model, std::span<const int> y, int null_label, const Shape& image_shape,
                             SamplerConfig cfg) {
  cfg.solver = Solver::euler;
  return integrate(model, initial_noise<T>(y.size(), image_shape.at(0), image_shape.at(1), image_shape.at(2), cfg.seed), y,
                   null_label, cfg);
}

template <typename T>
SampleResult<T> heun_sample(const VelocityModel<T>& model, std::span<const int> y, int null_label, const Shape& image_shape,
                            SamplerConfig cfg) {
  cfg.solver = Solver::heun;
  return integrate(model, initial_noise<T>(y.size(), image_shape.at(0), image_shape.at(1), image_shape.at(2), cfg.seed), y,
                   null_label, cfg);
}

}  // namespace deco::sampling
