#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "deco/flow_match.hpp"
#include "test_util.hpp"

using namespace deco;
using namespace deco::flow;
using deco::testing::random_tensor;
using deco::testing::randomize;
using deco::testing::tiny_model;

namespace {

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

// Pixel-domain MSE after the color transform, computed without any DCT.
double ycbcr_mse(const Tensor& a, const Tensor& b) {
  double s = 0;
  for (std::size_t p = 0; p < a.size() / 3; ++p)
    for (std::size_t c = 0; c < 3; ++c) {
      double d = 0;
      for (std::size_t k = 0; k < 3; ++k) d += freq::kRgbToYcbcr[c][k] * (a[p * 3 + k] - b[p * 3 + k]);
      s += d * d;
    }
  return s / double(a.size());
}

}  // namespace

TEST(Trajectory, InterpolantAndTarget) {
  std::mt19937_64 rng(1);
  Tensor x0 = random_tensor({3, 4, 4, 3}, rng);
  auto s = make_trajectory(x0, {0, 1, 2}, rng);
  ASSERT_EQ(s.t.size(), 3u);
  for (std::size_t b = 0; b < 3; ++b) {
    EXPECT_GT(s.t[b], 0.0);
    EXPECT_LT(s.t[b], 1.0);
    for (std::size_t j = b * 48; j < (b + 1) * 48; ++j) {
      EXPECT_DOUBLE_EQ(s.x_t[j], (1 - s.t[b]) * x0[j] + s.t[b] * s.x1[j]);
      EXPECT_DOUBLE_EQ(s.v_t[j], s.x1[j] - x0[j]);
    }
  }
  auto at0 = make_trajectory(x0, {0, 1, 2}, rng, std::optional<double>(0.0));
  EXPECT_EQ(at0.x_t, x0);
  auto at1 = make_trajectory(x0, {0, 1, 2}, rng, std::optional<double>(1.0));
  EXPECT_EQ(at1.x_t, at1.x1);
}

TEST(Trajectory, NoiseIsStandardNormal) {
  std::mt19937_64 rng(2);
  auto s = make_trajectory(Tensor({64, 8, 8, 3}), std::vector<int>(64, 0), rng);
  double m = 0, v = 0;
  for (double x : s.x1.data()) m += x;
  m /= double(s.x1.size());
  for (double x : s.x1.data()) v += (x - m) * (x - m);
  v /= double(s.x1.size());
  EXPECT_NEAR(m, 0.0, 0.03);
  EXPECT_NEAR(v, 1.0, 0.05);
}

TEST(Trajectory, RejectsNonFiniteInput) {
  std::mt19937_64 rng(3);
  Tensor x0({1, 2, 2, 3});
  x0[5] = std::nan("");
  EXPECT_THROW(make_trajectory(x0, {0}, rng), numeric_error);
}

TEST(TimeSampling, LogitNormalDistribution) {
  std::mt19937_64 rng(4);
  const std::size_t n = 200000;
  auto t = sample_time(rng, n);
  // P(t < q) = Phi(logit q) for the logistic image of a standard normal.
  for (double q : {0.1, 0.25, 0.5, 0.75, 0.9}) {
    const double expect = normal_cdf(std::log(q / (1 - q)));
    const double got = double(std::count_if(t.begin(), t.end(), [&](double v) { return v < q; })) / double(n);
    EXPECT_NEAR(got, expect, 4 * std::sqrt(expect * (1 - expect) / double(n))) << "q=" << q;
  }
  EXPECT_TRUE(std::all_of(t.begin(), t.end(), [](double v) { return v > 0 && v < 1; }));
}

TEST(Loss, FmIsMeanSquaredError) {
  Tensor a({1, 1, 2, 1}, std::vector<double>{1.0, 2.0}), b({1, 1, 2, 1}, std::vector<double>{0.0, 4.0});
  EXPECT_DOUBLE_EQ(fm_loss(a, b), 2.5);
  Graph<double> g;
  EXPECT_DOUBLE_EQ(fm_loss(g.constant(a), b).value().item(), 2.5);
}

TEST(Loss, QualityHundredEqualsColorSpaceMse) {
  std::mt19937_64 rng(5);
  const auto w = freq::frequency_weights(100);
  for (int trial = 0; trial < 50; ++trial) {
    Tensor a = random_tensor({2, 16, 8, 3}, rng), b = random_tensor({2, 16, 8, 3}, rng);
    const double ref = ycbcr_mse(a, b);
    EXPECT_LE(std::abs(freqfm_loss(a, b, w) - ref) / ref, 1e-9);
    Graph<double> g;
    EXPECT_LE(std::abs(freqfm_loss(g.constant(a), b, w).value().item() - ref) / ref, 1e-9);
  }
}

TEST(Loss, SingleCoefficientPicksItsWeight) {
  // A luma-only difference equal to one DCT basis function in one block isolates a single weight.
  const auto w = freq::frequency_weights(85);
  const auto basis = freq::dct_basis(8);
  for (auto [u, v] : {std::pair<std::size_t, std::size_t>{1, 3}, {3, 1}, {0, 7}, {6, 2}}) {
    Tensor ycc({1, 16, 16, 3});
    for (std::size_t i = 0; i < 8; ++i)
      for (std::size_t j = 0; j < 8; ++j) ycc[((8 + i) * 16 + j) * 3] = 2.0 * basis[u * 8 + i] * basis[v * 8 + j];
    Tensor diff = freq::ycbcr_to_rgb(ycc);
    Tensor zero(diff.shape());
    const double expect = w.luma[u][v] * 4.0 / double(diff.size());
    EXPECT_NEAR(freqfm_loss(diff, zero, w), expect, 1e-12) << u << "," << v;
    Graph<double> g;
    EXPECT_NEAR(freqfm_loss(g.constant(diff), zero, w).value().item(), expect, 1e-12) << u << "," << v;
  }
}

TEST(Loss, GraphMatchesTensorAtEveryQuality) {
  std::mt19937_64 rng(6);
  Tensor a = random_tensor({2, 8, 16, 3}, rng), b = random_tensor({2, 8, 16, 3}, rng);
  for (int q : {50, 70, 85, 100}) {
    const auto w = freq::frequency_weights(q);
    Graph<double> g;
    EXPECT_NEAR(freqfm_loss(g.constant(a), b, w).value().item(), freqfm_loss(a, b, w), 1e-12);
  }
}

TEST(Loss, RejectsBadShapes) {
  const auto w = freq::frequency_weights(85);
  EXPECT_THROW(freqfm_loss(Tensor({1, 12, 8, 3}), Tensor({1, 12, 8, 3}), w), shape_error);
  EXPECT_THROW(freqfm_loss(Tensor({1, 8, 8, 3}), Tensor({1, 8, 16, 3}), w), shape_error);
  EXPECT_THROW(fm_loss(Tensor({1, 8, 8, 3}), Tensor({2, 8, 8, 3})), shape_error);
}

TEST(Loss, FreqFmGradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(7);
  Tensor target = random_tensor({1, 8, 16, 3}, rng);
  const auto w = freq::frequency_weights(70);
  deco::testing::expect_gradients_match({random_tensor({1, 8, 16, 3}, rng)}, [&](Graph<double>&, const std::vector<Var<double>>& x) {
    return reshape(freqfm_loss(x[0], target, w), {1});
  });
}

TEST(ClassDropout, RateMatchesProbability) {
  std::mt19937_64 rng(8);
  std::vector<int> y(100000, 2);
  apply_class_dropout(y, 9, 0.1, rng);
  const double rate = double(std::count(y.begin(), y.end(), 9)) / double(y.size());
  EXPECT_NEAR(rate, 0.1, 0.004);
  std::vector<int> keep(100, 1);
  apply_class_dropout(keep, 9, 0.0, rng);
  EXPECT_EQ(std::count(keep.begin(), keep.end(), 9), 0);
}

TEST(Training, CompositeLossIsWeightedSum) {
  auto c = tiny_model(model::Variant::deco);
  auto p = model::init_parameters<double>(c, 1);
  randomize(p, 2);
  std::mt19937_64 rng(9);
  auto traj = make_trajectory(random_tensor({2, 16, 16, 3}, rng), {0, 3}, rng);
  const auto w = freq::frequency_weights(85);
  Graph<double> g;
  ParamBinding<double> P(g, p, false);
  const RepaHook<double> hook = [](Graph<double>&, const model::ForwardResult<double>& r) { return scale(mean(square(r.semantic)), 0.01); };
  auto terms = compute_losses(P, c, traj, w, 0.5, hook);
  ASSERT_TRUE(terms.repa.has_value());
  EXPECT_NEAR(terms.total.value().item(),
              terms.fm.value().item() + 0.5 * terms.freqfm.value().item() + terms.repa->value().item(), 1e-12);
  EXPECT_GT(terms.repa->value().item(), 0.0);
}

TEST(Training, StepsReduceLossOnFixedBatch) {
  auto c = tiny_model(model::Variant::deco);
  auto p = model::init_parameters<double>(c, 1);
  auto opt = OptimizerState<double>::for_params(p, AdamWConfig{2e-3, 0.9, 0.999, 1e-8, 0.0});
  auto ema = EmaShadow<double>::from(p, 0.99);
  // Four flat-colored images, one per class.
  Tensor x0({4, 16, 16, 3});
  for (std::size_t i = 0; i < x0.size(); ++i) x0[i] = 0.8 * std::sin(double(i / 768) * 1.7 + double(i % 3) * 2.1);
  const auto w = freq::frequency_weights(85);
  TrainConfig tc;
  tc.class_dropout = 0.0;
  // Evaluate on a frozen set of trajectories so the comparison is not noise-dominated.
  std::mt19937_64 eval_rng(11);
  std::vector<TrajectorySample<double>> evals;
  for (int i = 0; i < 4; ++i) evals.push_back(make_trajectory(x0, {0, 1, 2, 3}, eval_rng));
  auto eval = [&] {
    double s = 0;
    for (const auto& tr : evals) {
      Graph<double> g;
      ParamBinding<double> P(g, p, false);
      s += compute_losses(P, c, tr, w, 1.0).total.value().item();
    }
    return s;
  };
  const double before = eval();
  std::mt19937_64 rng(12);
  for (int i = 0; i < 150; ++i) {
    auto r = training_step(c, p, x0, {0, 1, 2, 3}, w, opt, ema, rng, tc);
    EXPECT_TRUE(std::isfinite(r.total));
    EXPECT_GT(r.grad_norm, 0.0);
  }
  const double after = eval();
  EXPECT_LT(after, 0.8 * before);
  EXPECT_EQ(opt.step, 150u);
}

TEST(Training, NonFiniteParametersAreReported) {
  auto c = tiny_model(model::Variant::baseline);
  auto p = model::init_parameters<double>(c, 1);
  randomize(p, 3);
  p[0][0] = std::numeric_limits<double>::infinity();
  auto opt = OptimizerState<double>::for_params(p, AdamWConfig{});
  auto ema = EmaShadow<double>::from(p);
  std::mt19937_64 rng(13);
  EXPECT_THROW(training_step(c, p, random_tensor({1, 16, 16, 3}, rng), {0}, freq::frequency_weights(85), opt, ema, rng), numeric_error);
}
