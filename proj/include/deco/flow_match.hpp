#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "deco/autodiff.hpp"
#include "deco/freq.hpp"
#include "deco/model.hpp"
#include "deco/optim.hpp"
#include "deco/params.hpp"

namespace deco::flow {

/// t = sigmoid(z), z ~ N(0, 1), one draw per sample.
template <typename T = double>
std::vector<T> sample_time(std::mt19937_64& rng, std::size_t count) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<T> t(count);
  for (auto& v : t) v = T(1.0 / (1.0 + std::exp(-normal(rng))));
  return t;
}

template <typename T>
struct TrajectorySample {
  basic_tensor<T> x0;   // clean batch [B, H, W, C]
  basic_tensor<T> x1;   // N(0, 1) noise
  std::vector<T> t;     // per-sample time
  basic_tensor<T> x_t;  // (1 - t) x0 + t x1
  basic_tensor<T> v_t;  // x1 - x0
  std::vector<int> y;
};

/// Builds the interpolant and target velocity. `forced_t` pins every sample's time (testing).
template <typename T>
TrajectorySample<T> make_trajectory(const basic_tensor<T>& x0, std::vector<int> y, std::mt19937_64& rng,
                                    std::optional<T> forced_t = std::nullopt) {
  if (x0.rank() == 0) throw shape_error("make_trajectory: x0 needs a batch axis");
  if (!x0.all_finite()) throw numeric_error("make_trajectory: x0 contains non-finite values");
  const std::size_t b = x0.dim(0), per = b ? x0.size() / b : 0;
  TrajectorySample<T> s;
  s.t = forced_t ? std::vector<T>(b, *forced_t) : sample_time<T>(rng, b);
  s.x0 = x0;
  s.x1 = basic_tensor<T>(x0.shape());
  std::normal_distribution<double> normal(0.0, 1.0);
  for (auto& v : s.x1.data()) v = T(normal(rng));
  s.x_t = basic_tensor<T>(x0.shape());
  s.v_t = basic_tensor<T>(x0.shape());
  for (std::size_t i = 0; i < b; ++i) {
    const T t = s.t[i];
    for (std::size_t j = i * per; j < (i + 1) * per; ++j) {
      s.x_t[j] = (T(1) - t) * x0[j] + t * s.x1[j];
      s.v_t[j] = s.x1[j] - x0[j];
    }
  }
  s.y = std::move(y);
  return s;
}

// ---------------------------------------------------------------------------
// Losses on plain tensors

template <typename T>
double fm_loss(const basic_tensor<T>& v_pred, const basic_tensor<T>& v_t) {
  if (v_pred.shape() != v_t.shape()) throw shape_error("fm_loss: " + shape_str(v_pred.shape()) + " vs " + shape_str(v_t.shape()));
  double s = 0;
  for (std::size_t i = 0; i < v_pred.size(); ++i) {
    const double d = double(v_pred[i]) - double(v_t[i]);
    s += d * d;
  }
  return s / double(v_pred.size());
}

namespace detail {
inline void check_freq_shape(const Shape& s, const char* op) {
  if (s.size() != 4 || s[3] != 3) throw shape_error(std::string(op) + ": expected [B,H,W,3], got " + shape_str(s));
  if (s[1] % 8 != 0 || s[2] % 8 != 0) throw shape_error(std::string(op) + ": extents " + shape_str(s) + " not divisible by 8");
}
}  // namespace detail

/// mean over batch, channels, blocks and coefficients of w * (T(v_pred) - T(v_t))^2.
template <typename T>
double freqfm_loss(const basic_tensor<T>& v_pred, const basic_tensor<T>& v_t, const freq::FrequencyWeightSet& w) {
  if (v_pred.shape() != v_t.shape()) throw shape_error("freqfm_loss: " + shape_str(v_pred.shape()) + " vs " + shape_str(v_t.shape()));
  detail::check_freq_shape(v_pred.shape(), "freqfm_loss");
  const auto a = freq::frequency_transform(v_pred);
  const auto b = freq::frequency_transform(v_t);
  const std::size_t h = v_pred.dim(1), wd = v_pred.dim(2);
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const std::size_t c = i % 3, pix = (i / 3) % (h * wd), col = pix % wd, row = pix / wd;
    const double d = double(a[i]) - double(b[i]);
    s += w.channel(c)[row % 8][col % 8] * d * d;
  }
  return s / double(a.size());
}

// ---------------------------------------------------------------------------
// Losses on the computation graph

template <typename T>
Var<T> fm_loss(Var<T> v_pred, const basic_tensor<T>& v_t) {
  if (v_pred.shape() != v_t.shape()) throw shape_error("fm_loss: " + shape_str(v_pred.shape()) + " vs " + shape_str(v_t.shape()));
  return mean(square(sub(v_pred, v_pred.graph->constant(v_t))));
}

/// Differentiable frequency transform of [B, H, W, 3]: YCbCr, then 8x8 DCT per channel.
/// Returns coefficients as [B, 3, H/8, W/8, 8(v), 8(u)].
template <typename T>
Var<T> frequency_transform(Var<T> v) {
  const auto s = v.shape();
  detail::check_freq_shape(s, "frequency_transform");
  Graph<T>& g = *v.graph;
  basic_tensor<T> mt({3, 3});
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j) mt[j * 3 + i] = T(freq::kRgbToYcbcr[i][j]);
  const auto basis = freq::dct_basis(8);
  basic_tensor<T> ct({8, 8});
  for (std::size_t u = 0; u < 8; ++u)
    for (std::size_t x = 0; x < 8; ++x) ct[x * 8 + u] = T(basis[u * 8 + x]);
  const std::size_t b = s[0], by = s[1] / 8, bx = s[2] / 8;
  Var<T> y = matmul(v, g.constant(mt));
  y = permute(reshape(y, {b, by, 8, bx, 8, 3}), {0, 5, 1, 3, 2, 4});
  Var<T> cts = g.constant(ct);
  y = matmul(y, cts);                           // [.., i, v]
  y = matmul(permute(y, {0, 1, 2, 3, 5, 4}), cts);  // [.., v, u]
  return y;
}

/// Weight tensor aligned with frequency_transform's [.., 3, 1, 1, 8(v), 8(u)] layout.
template <typename T>
basic_tensor<T> frequency_weight_tensor(const freq::FrequencyWeightSet& w) {
  basic_tensor<T> out({3, 1, 1, 8, 8});
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t v = 0; v < 8; ++v)
      for (std::size_t u = 0; u < 8; ++u) out[c * 64 + v * 8 + u] = T(w.channel(c)[u][v]);
  return out;
}

/// Computes the difference first; the transform is linear so this equals T(v_pred) - T(v_t).
template <typename T>
Var<T> freqfm_loss(Var<T> v_pred, const basic_tensor<T>& v_t, const freq::FrequencyWeightSet& w) {
  if (v_pred.shape() != v_t.shape()) throw shape_error("freqfm_loss: " + shape_str(v_pred.shape()) + " vs " + shape_str(v_t.shape()));
  Graph<T>& g = *v_pred.graph;
  Var<T> coeffs = frequency_transform(sub(v_pred, g.constant(v_t)));
  return mean(mul(square(coeffs), g.constant(frequency_weight_tensor<T>(w))));
}

// ---------------------------------------------------------------------------
// Training

/// Extra loss term attached to the model's forward outputs; an empty hook contributes zero.
template <typename T>
using RepaHook = std::function<Var<T>(Graph<T>&, const model::ForwardResult<T>&)>;

struct TrainConfig {
  double class_dropout = 0.1;
  double freqfm_weight = 1.0;
  double max_grad_norm = 0.0;  // 0 disables clipping
};

struct LossReport {
  double fm = 0;
  double freqfm = 0;
  double repa = 0;
  double total = 0;
  double grad_norm = 0;
};

template <typename T>
struct LossTerms {
  Var<T> fm;
  Var<T> freqfm;
  std::optional<Var<T>> repa;
  Var<T> total;
};

/// Forward pass plus the composite objective fm + weight * freqfm + repa.
template <typename T>
LossTerms<T> compute_losses(ParamBinding<T>& P, const model::ModelConfig& cfg, const TrajectorySample<T>& traj,
                            const freq::FrequencyWeightSet& weights, double freqfm_weight, const RepaHook<T>& repa = {}) {
  auto out = model::forward(P, cfg, traj.x_t, std::span<const T>(traj.t), std::span<const int>(traj.y));
  LossTerms<T> terms;
  terms.fm = fm_loss(out.velocity, traj.v_t);
  terms.freqfm = freqfm_loss(out.velocity, traj.v_t, weights);
  terms.total = add(terms.fm, scale(terms.freqfm, T(freqfm_weight)));
  if (repa) {
    terms.repa = repa(P.graph(), out);
    terms.total = add(terms.total, *terms.repa);
  }
  return terms;
}

/// Replaces each label by the null class with probability p.
inline void apply_class_dropout(std::vector<int>& y, int null_label, double p, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (auto& label : y)
    if (u(rng) < p) label = null_label;
}

/// One optimization step: class dropout, trajectory draw, forward/backward, AdamW, EMA.
template <typename T>
LossReport training_step(const model::ModelConfig& cfg, ParameterStore<T>& params, const basic_tensor<T>& x0, std::vector<int> y,
                         const freq::FrequencyWeightSet& weights, OptimizerState<T>& opt, EmaShadow<T>& ema,
                         std::mt19937_64& rng, const TrainConfig& tc = {}, const RepaHook<T>& repa = {}) {
  apply_class_dropout(y, int(cfg.dit.num_classes), tc.class_dropout, rng);
  auto traj = make_trajectory(x0, std::move(y), rng);
  Graph<T> g;
  ParamBinding<T> P(g, params);
  auto terms = compute_losses(P, cfg, traj, weights, tc.freqfm_weight, repa);
  LossReport r;
  r.fm = double(terms.fm.value().item());
  r.freqfm = double(terms.freqfm.value().item());
  r.repa = terms.repa ? double(terms.repa->value().item()) : 0.0;
  r.total = double(terms.total.value().item());
  for (auto [name, v] : {std::pair{"fm", r.fm}, std::pair{"freqfm", r.freqfm}, std::pair{"repa", r.repa}}) {
    if (!std::isfinite(v)) throw numeric_error(std::string("training_step: non-finite ") + name + " loss");
  }
  auto grads = gradient(g, terms.total, P);
  r.grad_norm = clip_grad_norm(grads, tc.max_grad_norm);
  adamw_step(params, grads, opt);
  ema_update(ema, params);
  return r;
}

}  // namespace deco::flow
