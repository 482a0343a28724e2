#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "deco/app/checkpoint.hpp"
#include "deco/app/config.hpp"
#include "deco/app/dataset.hpp"
#include "deco/flow_match.hpp"
#include "deco/model.hpp"
#include "deco/optim.hpp"
#include "deco/sampler.hpp"

namespace deco::app {

/// Independent stream for one training step, so a resumed run replays the same draws.
inline std::mt19937_64 step_rng(std::uint64_t seed, std::uint64_t step) {
  std::seed_seq seq{std::uint32_t(seed), std::uint32_t(seed >> 32), std::uint32_t(step), std::uint32_t(step >> 32), 0x7a11u};
  return std::mt19937_64(seq);
}

template <typename T>
struct TrainState {
  ParameterStore<T> params;
  OptimizerState<T> opt;
  EmaShadow<T> ema;
  std::uint64_t step = 0;
};

template <typename T>
TrainState<T> init_train_state(const RunConfig& cfg) {
  TrainState<T> s;
  s.params = model::init_parameters<T>(cfg.model_config(), cfg.training.seed);
  AdamWConfig a;
  a.lr = cfg.training.lr;
  s.opt = OptimizerState<T>::for_params(s.params, a);
  s.ema = EmaShadow<T>::from(s.params, cfg.training.ema_decay);
  return s;
}

inline constexpr const char* kParamPrefix = "params/";
inline constexpr const char* kEmaPrefix = "ema/";
inline constexpr const char* kMomentPrefix = "adam_m/";
inline constexpr const char* kVariancePrefix = "adam_v/";

template <typename T>
Checkpoint to_checkpoint(const TrainState<T>& s) {
  Checkpoint ck;
  ck.step = s.step;
  auto put = [&](const char* prefix, const ParameterStore<T>& store) {
    for (std::size_t i = 0; i < store.size(); ++i) ck.arrays.push_back(NamedArray::from(prefix + store.name(i), store[i]));
  };
  put(kParamPrefix, s.params);
  put(kEmaPrefix, s.ema.shadow);
  put(kMomentPrefix, s.opt.m);
  put(kVariancePrefix, s.opt.v);
  return ck;
}

/// Overwrites `dst` entries with checkpoint arrays under `prefix`; names and shapes must match.
template <typename T>
void restore_store(ParameterStore<T>& dst, const Checkpoint& ck, const std::string& prefix) {
  for (std::size_t i = 0; i < dst.size(); ++i) {
    const auto& a = ck.at(prefix + dst.name(i));
    if (a.shape != dst[i].shape()) {
      throw checkpoint_error("array '" + a.name + "' has shape " + shape_str(a.shape) + ", model expects " + shape_str(dst[i].shape()));
    }
    dst[i] = a.template to<T>();
  }
}

/// Restores a state built by init_train_state from a checkpoint of the same configuration.
template <typename T>
void restore_train_state(TrainState<T>& s, const Checkpoint& ck) {
  restore_store(s.params, ck, kParamPrefix);
  restore_store(s.ema.shadow, ck, kEmaPrefix);
  restore_store(s.opt.m, ck, kMomentPrefix);
  restore_store(s.opt.v, ck, kVariancePrefix);
  s.opt.step = ck.step;
  s.step = ck.step;
}

/// Weights of one kind ("params" or "ema") from a checkpoint, in the model's parameter order.
template <typename T>
ParameterStore<T> checkpoint_weights(const Checkpoint& ck, const model::ModelConfig& mc, const std::string& kind) {
  auto store = model::init_parameters<T>(mc, 0);
  restore_store(store, ck, kind == "ema" ? kEmaPrefix : kParamPrefix);
  return store;
}

inline flow::TrainConfig train_config(const RunConfig& cfg) {
  flow::TrainConfig tc;
  tc.class_dropout = cfg.training.class_dropout;
  tc.freqfm_weight = cfg.training.freqfm_weight;
  tc.max_grad_norm = cfg.training.max_grad_norm;
  return tc;
}

/// Samples a batch with replacement, then runs one optimization step.
template <typename T>
flow::LossReport train_step(const RunConfig& cfg, const model::ModelConfig& mc, TrainState<T>& s, const LabeledImages& data,
                            const freq::FrequencyWeightSet& weights, const flow::RepaHook<T>& repa = {}) {
  auto rng = step_rng(cfg.training.seed, s.step);
  std::uniform_int_distribution<std::size_t> pick(0, data.size() - 1);
  std::vector<std::size_t> idx(cfg.training.batch_size);
  for (auto& i : idx) i = pick(rng);
  auto x0 = gather_images<T>(data, idx);
  auto r = flow::training_step(mc, s.params, x0, gather_labels(data, idx), weights, s.opt, s.ema, rng, train_config(cfg), repa);
  ++s.step;
  return r;
}

inline LabeledImages load_dataset(const RunConfig& cfg) {
  if (cfg.data.source == "directory") {
    auto ds = load_image_directory(cfg.data.path, cfg.data.image_size);
    if (ds.class_names.size() != cfg.data.num_classes) {
      throw std::invalid_argument("data.path has " + std::to_string(ds.class_names.size()) + " class directories but data.num_classes is " +
                                  std::to_string(cfg.data.num_classes));
    }
    return ds;
  }
  return generate_synthetic_dataset(cfg.data.synthetic_spec());
}

// ---------------------------------------------------------------------------
// Sampling

/// Called after every model evaluation with the evaluated labels and both model outputs.
template <typename T>
using EvalObserver = std::function<void(double t, std::span<const int> y, const basic_tensor<T>& semantic, const basic_tensor<T>& velocity)>;

template <typename T>
sampling::VelocityModel<T> velocity_model(const ParameterStore<T>& weights, const model::ModelConfig& mc, EvalObserver<T> observe = {}) {
  return [&weights, mc, observe](const basic_tensor<T>& x, T t, std::span<const int> y) {
    std::vector<T> ts(y.size(), t);
    basic_tensor<T> sem;
    auto v = model::evaluate_velocity(weights, mc, x, std::span<const T>(ts), y, observe ? &sem : nullptr);
    if (observe) observe(double(t), y, sem, v);
    return v;
  };
}

/// Labels 0, 1, ..., K-1, 0, 1, ... for `count` samples.
inline std::vector<int> cycling_labels(std::size_t count, std::size_t num_classes) {
  std::vector<int> y(count);
  for (std::size_t i = 0; i < count; ++i) y[i] = int(i % num_classes);
  return y;
}

template <typename T>
sampling::SampleResult<T> generate(const ParameterStore<T>& weights, const model::ModelConfig& mc, std::span<const int> labels,
                                   const sampling::SamplerConfig& sc, EvalObserver<T> observe = {}) {
  auto field = velocity_model(weights, mc, std::move(observe));
  auto x1 = sampling::initial_noise<T>(labels.size(), mc.dit.image_height, mc.dit.image_width, mc.dit.channels, sc.seed);
  return sampling::integrate<T>(field, std::move(x1), labels, int(mc.dit.num_classes), sc);
}

}  // namespace deco::app
