#pragma once

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "deco/autodiff.hpp"
#include "deco/model.hpp"
#include "deco/params.hpp"
#include "deco/tensor.hpp"

namespace deco::testing {

inline Tensor random_tensor(const Shape& shape, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Tensor t(shape);
  for (auto& v : t.data()) v = n(rng);
  return t;
}

inline double rel_err(double a, double b, double floor = 1e-8) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor}); }

using GraphFn = std::function<Var<double>(Graph<double>&, const std::vector<Var<double>>&)>;

inline Tensor evaluate(const GraphFn& f, const std::vector<Tensor>& inputs) {
  Graph<double> g;
  std::vector<Var<double>> vs;
  for (const auto& x : inputs) vs.push_back(g.constant(x));
  return f(g, vs).value();
}

inline double dot(const Tensor& a, const Tensor& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

/// Compares reverse-mode gradients of sum(f(inputs) * R), R fixed random, with central differences
/// on every input element.
inline void expect_gradients_match(const std::vector<Tensor>& inputs, const GraphFn& f, double tol = 1e-6, double h = 1e-5,
                                   std::uint64_t seed = 7) {
  std::mt19937_64 rng(seed);
  const Tensor r = random_tensor(evaluate(f, inputs).shape(), rng);

  Graph<double> g;
  std::vector<Var<double>> vs;
  for (const auto& x : inputs) vs.push_back(g.variable(x));
  Var<double> loss = sum(mul(f(g, vs), g.constant(r)));
  g.backward(loss);

  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const Tensor an = g.grad(vs[i]);
    for (std::size_t j = 0; j < inputs[i].size(); ++j) {
      auto plus = inputs, minus = inputs;
      plus[i][j] += h;
      minus[i][j] -= h;
      const double fd = (dot(evaluate(f, plus), r) - dot(evaluate(f, minus), r)) / (2 * h);
      EXPECT_LE(rel_err(an[j], fd, 1.0), tol) << "input " << i << " element " << j << ": analytic " << an[j] << " vs fd " << fd;
    }
  }
}

/// Small model used across suites: 16x16 (or `size`) images, 5 classes, patch 4.
inline model::ModelConfig tiny_model(model::Variant v, std::size_t size = 16) {
  model::ModelConfig c;
  c.variant = v;
  c.dit.depth = 2;
  c.dit.hidden_dim = 32;
  c.dit.heads = 2;
  c.dit.patch_size = 4;
  c.dit.num_classes = 5;
  c.dit.image_height = c.dit.image_width = size;
  c.dit.time_freq_dim = 32;
  c.decoder.hidden_dim = 8;
  c.decoder.depth = 2;
  c.decoder.pos_dim = 8;
  c.decoder.time_freq_dim = 16;
  return c;
}

/// Replaces every parameter with Gaussian noise so zero-initialized paths carry signal.
template <typename T>
void randomize(ParameterStore<T>& s, std::uint64_t seed, double scale = 0.2) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, scale);
  for (std::size_t i = 0; i < s.size(); ++i)
    for (auto& v : s[i].data()) v = T(n(rng));
}

/// Scratch directory removed at scope exit.
class TempDir {
 public:
  TempDir() {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() / ("deco_test_" + std::to_string(rd()) + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& s) const { return path_ / s; }

 private:
  std::filesystem::path path_;
};

}  // namespace deco::testing
