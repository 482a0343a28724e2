#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "deco/sampler.hpp"
#include "test_util.hpp"

using namespace deco;
using namespace deco::sampling;

namespace {

// dx/dt = a * x, integrated backwards from t = 1 to 0: exact x(0) = x(1) * exp(-a).
VelocityModel<double> linear_field(double a) {
  return [a](const Tensor& x, double, std::span<const int>) { return x * a; };
}

double final_error(Solver s, std::size_t steps, double a) {
  SamplerConfig c;
  c.steps = steps;
  c.solver = s;
  Tensor x({1, 1, 1, 1}, 1.0);
  const int y = 0;
  auto r = integrate(linear_field(a), x, std::span<const int>(&y, 1), 1, c);
  return std::abs(r.state[0] - std::exp(-a));
}

double fitted_order(Solver s) {
  // Least-squares slope of log error against log step count.
  std::vector<double> lx, ly;
  for (std::size_t n : {8u, 16u, 32u, 64u}) {
    lx.push_back(std::log(double(n)));
    ly.push_back(std::log(final_error(s, n, 1.5)));
  }
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < 4; ++i) mx += lx[i] / 4, my += ly[i] / 4;
  double sxy = 0, sxx = 0;
  for (std::size_t i = 0; i < 4; ++i) sxy += (lx[i] - mx) * (ly[i] - my), sxx += (lx[i] - mx) * (lx[i] - mx);
  return -sxy / sxx;
}

}  // namespace

TEST(Sampler, ConstantFieldIsIntegratedExactly) {
  // x(0) = x(1) - c for dx/dt = c, for any step count and either solver.
  auto field = [](const Tensor& x, double, std::span<const int>) { return Tensor(x.shape(), 0.75); };
  for (Solver s : {Solver::euler, Solver::heun})
    for (std::size_t n : {1u, 3u, 10u}) {
      SamplerConfig c;
      c.steps = n;
      c.solver = s;
      Tensor x({2, 2, 2, 3}, 0.5);
      std::vector<int> y{0, 1};
      auto r = integrate<double>(field, x, y, 2, c);
      for (double v : r.state.data()) EXPECT_NEAR(v, -0.25, 1e-14);
    }
}

TEST(Sampler, LinearInTimeFieldIsExactForHeun) {
  // v = t integrates to x(0) = x(1) - 1/2; the trapezoid rule is exact for linear integrands.
  auto field = [](const Tensor& x, double t, std::span<const int>) { return Tensor(x.shape(), t); };
  SamplerConfig c;
  c.steps = 7;
  c.solver = Solver::heun;
  const int y = 0;
  auto r = integrate<double>(field, Tensor({1, 1, 1, 1}, 2.0), std::span<const int>(&y, 1), 1, c);
  EXPECT_NEAR(r.state[0], 1.5, 1e-14);
}

TEST(Sampler, ConvergenceOrders) {
  EXPECT_NEAR(fitted_order(Solver::euler), 1.0, 0.3);
  EXPECT_NEAR(fitted_order(Solver::heun), 2.0, 0.3);
}

TEST(Sampler, EvaluationCounts) {
  auto field = linear_field(1.0);
  const int y = 0;
  auto count = [&](Solver s, double cfg, bool final_euler) {
    SamplerConfig c;
    c.steps = 10;
    c.solver = s;
    c.cfg_scale = cfg;
    c.heun_final_euler = final_euler;
    return integrate(field, Tensor({1, 1, 1, 1}, 1.0), std::span<const int>(&y, 1), 1, c).evaluations;
  };
  EXPECT_EQ(count(Solver::euler, 1.0, false), 10u);
  EXPECT_EQ(count(Solver::euler, 3.0, false), 20u);
  EXPECT_EQ(count(Solver::heun, 1.0, false), 20u);
  EXPECT_EQ(count(Solver::heun, 1.0, true), 19u);
  EXPECT_EQ(count(Solver::heun, 2.0, false), 40u);
}

TEST(Sampler, GuidanceOnlyInsideInterval) {
  // Conditional field is +1, unconditional is 0: guided steps move by s, unguided by 1.
  auto field = [](const Tensor& x, double, std::span<const int> y) { return Tensor(x.shape(), y[0] == 5 ? 0.0 : 1.0); };
  SamplerConfig c;
  c.steps = 10;
  c.cfg_scale = 3.0;
  c.interval_lo = 0.45;
  c.interval_hi = 1.0;
  const int y = 0;
  auto r = integrate<double>(field, Tensor({1, 1, 1, 1}, 0.0), std::span<const int>(&y, 1), 5, c);
  // Start times 1.0 .. 0.5 (6 steps) are guided, 0.4 .. 0.1 (4 steps) are not.
  EXPECT_NEAR(r.state[0], -(6 * 3.0 + 4 * 1.0) * 0.1, 1e-12);
}

TEST(Sampler, CfgVelocityFormula) {
  Tensor c({2}, std::vector<double>{1.0, 2.0}), u({2}, std::vector<double>{0.5, -1.0});
  auto g = cfg_velocity(c, u, 2.0, 0.5, 0.1, 1.0);
  EXPECT_DOUBLE_EQ(g[0], 1.5);
  EXPECT_DOUBLE_EQ(g[1], 5.0);
  EXPECT_EQ(cfg_velocity(c, u, 2.0, 0.05, 0.1, 1.0), c);
  EXPECT_THROW(cfg_velocity(c, Tensor({3}), 2.0, 0.5, 0.1, 1.0), shape_error);
}

TEST(Sampler, ImagesAreClippedStateIsNot) {
  auto field = [](const Tensor& x, double, std::span<const int>) { return Tensor(x.shape(), -5.0); };
  SamplerConfig c;
  c.steps = 2;
  const int y = 0;
  auto r = integrate<double>(field, Tensor({1, 1, 1, 1}, 0.0), std::span<const int>(&y, 1), 1, c);
  EXPECT_DOUBLE_EQ(r.state[0], 5.0);
  EXPECT_DOUBLE_EQ(r.images[0], 1.0);
}

TEST(Sampler, DeterministicGivenSeed) {
  auto field = [](const Tensor& x, double t, std::span<const int>) { return x * (0.3 + t); };
  SamplerConfig c;
  c.steps = 12;
  c.seed = 42;
  std::vector<int> y{0, 1, 2};
  const Shape img{4, 4, 3};
  auto a = euler_sample<double>(field, y, 3, img, c), b = euler_sample<double>(field, y, 3, img, c);
  EXPECT_EQ(a.state, b.state);
  c.seed = 43;
  EXPECT_FALSE(euler_sample<double>(field, y, 3, img, c).state == a.state);
  auto h1 = heun_sample<double>(field, y, 3, img, c), h2 = heun_sample<double>(field, y, 3, img, c);
  EXPECT_EQ(h1.state, h2.state);
}

TEST(Sampler, InitialNoiseStatistics) {
  auto x = initial_noise<double>(16, 16, 16, 3, 7);
  double m = 0, v = 0;
  for (double e : x.data()) m += e;
  m /= double(x.size());
  for (double e : x.data()) v += (e - m) * (e - m);
  v /= double(x.size());
  EXPECT_NEAR(m, 0.0, 0.05);
  EXPECT_NEAR(v, 1.0, 0.06);
}

TEST(Sampler, InvalidConfigRejected) {
  SamplerConfig c;
  c.cfg_scale = 0.5;
  c.interval_lo = 0.9;
  c.interval_hi = 0.2;
  EXPECT_EQ(c.violations().size(), 2u);
  const int y = 0;
  EXPECT_THROW(integrate(linear_field(1.0), Tensor({1, 1, 1, 1}), std::span<const int>(&y, 1), 1, c), std::invalid_argument);
  EXPECT_THROW(solver_from_string("rk4"), std::invalid_argument);
}
