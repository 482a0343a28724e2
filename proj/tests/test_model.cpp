#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "deco/model.hpp"
#include "deco/params.hpp"
#include "test_util.hpp"

using namespace deco;
using namespace deco::model;
using deco::testing::random_tensor;
using deco::testing::randomize;

namespace {

ModelConfig small_config(Variant v, std::size_t size = 16) { return deco::testing::tiny_model(v, size); }

}  // namespace

TEST(Embedding, TimestepMatchesFormula) {
  std::vector<double> t{0.0, 0.37};
  auto e = timestep_embedding<double>(std::span<const double>(t), 8);
  ASSERT_EQ(e.shape(), (Shape{2, 8}));
  for (std::size_t k = 0; k < 4; ++k) {
    const double f = std::pow(10000.0, -double(k) / 4.0);
    EXPECT_NEAR(e.at({0, k}), 1.0, 1e-15);
    EXPECT_NEAR(e.at({0, 4 + k}), 0.0, 1e-15);
    EXPECT_NEAR(e.at({1, k}), std::cos(370.0 * f), 1e-12);
    EXPECT_NEAR(e.at({1, 4 + k}), std::sin(370.0 * f), 1e-12);
  }
}

TEST(Embedding, SinCosGridDistinguishesPositions) {
  auto p = sincos_2d<double>(4, 4, 16);
  ASSERT_EQ(p.shape(), (Shape{16, 16}));
  for (std::size_t a = 0; a < 16; ++a)
    for (std::size_t b = a + 1; b < 16; ++b) {
      double d = 0;
      for (std::size_t k = 0; k < 16; ++k) d += std::abs(p[a * 16 + k] - p[b * 16 + k]);
      EXPECT_GT(d, 1e-3);
    }
  // Row and column halves: each half depends only on its coordinate.
  EXPECT_EQ(p[(1 * 4 + 0) * 16 + 0], p[(1 * 4 + 3) * 16 + 0]);
  EXPECT_EQ(p[(0 * 4 + 2) * 16 + 8], p[(3 * 4 + 2) * 16 + 8]);
}

TEST(Layout, PatchifyUnpatchifyRoundTrip) {
  std::mt19937_64 rng(1);
  Tensor x = random_tensor({2, 8, 12, 3}, rng);
  Tensor tok = patchify(x, 4);
  ASSERT_EQ(tok.shape(), (Shape{2, 6, 48}));
  // Token (1, 2) of image 1 holds pixel (4 + 1, 8 + 3) at in-patch offset (1 * 4 + 3) * 3.
  EXPECT_EQ(tok.at({1, 1 * 3 + 2, (1 * 4 + 3) * 3 + 2}), x.at({1, 5, 11, 2}));
  EXPECT_EQ(unpatchify(tok, 4, 8, 12, 3), x);
  EXPECT_THROW(patchify(x, 5), shape_error);
}

TEST(Config, ViolationsAreListed) {
  ModelConfig c = small_config(Variant::deco);
  c.dit.heads = 3;  // 32 not divisible by 3
  c.decoder.patch_size = 3;
  const auto v = c.violations();
  EXPECT_GE(v.size(), 2u);
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = small_config(Variant::deco);
  c.dit.heads = 4;  // head dim 8, fine
  EXPECT_TRUE(c.violations().empty());
  c.dit.heads = 16;  // head dim 2, not divisible by 4
  EXPECT_FALSE(c.violations().empty());
}

TEST(Init, DeterministicFromSeed) {
  auto c = small_config(Variant::deco);
  EXPECT_EQ(init_parameters<double>(c, 3), init_parameters<double>(c, 3));
  EXPECT_FALSE(init_parameters<double>(c, 3) == init_parameters<double>(c, 4));
}

TEST(Init, BaselineCarriesTwoExtraBlocks) {
  auto deco = init_parameters<double>(small_config(Variant::deco), 0);
  auto base = init_parameters<double>(small_config(Variant::baseline), 0);
  EXPECT_TRUE(base.contains("dit.blocks.3.adaln.weight"));
  EXPECT_FALSE(base.contains("dit.blocks.4.adaln.weight"));
  EXPECT_FALSE(deco.contains("dit.blocks.2.adaln.weight"));
  EXPECT_TRUE(deco.contains("decoder.blocks.1.mod.weight"));
  EXPECT_EQ(deco.parameter_count("dit.blocks.0"), base.parameter_count("dit.blocks.0"));
  EXPECT_EQ(base.parameter_count("decoder"), 0u);
}

TEST(Init, VelocityIsExactlyZeroForBothVariants) {
  std::mt19937_64 rng(2);
  for (Variant v : {Variant::deco, Variant::baseline}) {
    auto c = small_config(v);
    auto p = init_parameters<double>(c, 11);
    Tensor x = random_tensor({3, 16, 16, 3}, rng);
    std::vector<double> t{0.1, 0.5, 0.9};
    std::vector<int> y{0, 4, 5};
    Tensor vel = evaluate_velocity(p, c, x, std::span<const double>(t), std::span<const int>(y));
    ASSERT_EQ(vel.shape(), x.shape());
    for (double e : vel.data()) EXPECT_EQ(e, 0.0);
  }
}

TEST(Init, DecoderBlocksAreIdentity) {
  auto c = small_config(Variant::deco);
  auto p = init_parameters<double>(c, 5);
  std::mt19937_64 rng(3);
  Graph<double> g;
  ParamBinding<double> P(g, p, false);
  std::vector<double> t{0.3, 0.8};
  Var<double> sem = g.constant(random_tensor({2, 4, 4, 32}, rng));
  auto cond = upsample_condition(P, c, sem, std::span<const double>(t));
  for (std::size_t i = 0; i < c.decoder.depth; ++i) {
    Tensor h = random_tensor({2, 16, 16, 8}, rng, 2.0);
    Tensor out = decoder_block(P, i, g.constant(h), cond).value();
    EXPECT_EQ(out, h) << "block " << i;
  }
}

TEST(Forward, ShapesAndSemanticGrid) {
  std::mt19937_64 rng(4);
  for (Variant v : {Variant::deco, Variant::baseline}) {
    auto c = small_config(v);
    auto p = init_parameters<double>(c, 1);
    randomize(p, 9);
    Graph<double> g;
    ParamBinding<double> P(g, p);
    Tensor x = random_tensor({2, 16, 16, 3}, rng);
    std::vector<double> t{0.2, 0.7};
    std::vector<int> y{1, 2};
    auto r = forward(P, c, x, std::span<const double>(t), std::span<const int>(y));
    EXPECT_EQ(r.velocity.shape(), x.shape());
    EXPECT_EQ(r.semantic.shape(), (Shape{2, 4, 4, 32}));
    EXPECT_TRUE(r.velocity.value().all_finite());
  }
}

TEST(Forward, LabelsAreValidated) {
  auto c = small_config(Variant::deco);
  auto p = init_parameters<double>(c, 1);
  Tensor x({1, 16, 16, 3});
  std::vector<double> t{0.5};
  std::vector<int> bad{6}, null_label{5};
  EXPECT_THROW(evaluate_velocity(p, c, x, std::span<const double>(t), std::span<const int>(bad)), std::out_of_range);
  EXPECT_NO_THROW(evaluate_velocity(p, c, x, std::span<const double>(t), std::span<const int>(null_label)));
  std::vector<int> two{0, 1};
  EXPECT_THROW(evaluate_velocity(p, c, x, std::span<const double>(t), std::span<const int>(two)), shape_error);
}

TEST(Forward, SamplesInBatchAreIndependent) {
  auto c = small_config(Variant::deco);
  auto p = init_parameters<double>(c, 1);
  randomize(p, 10);
  std::mt19937_64 rng(5);
  Tensor x = random_tensor({2, 16, 16, 3}, rng);
  std::vector<double> t{0.2, 0.7};
  std::vector<int> y{1, 3};
  Tensor both = evaluate_velocity(p, c, x, std::span<const double>(t), std::span<const int>(y));
  Tensor x1({1, 16, 16, 3});
  std::copy_n(x.data().begin() + 768, 768, x1.data().begin());
  Tensor one = evaluate_velocity(p, c, x1, std::span<const double>(t).subspan(1), std::span<const int>(y).subspan(1));
  for (std::size_t i = 0; i < 768; ++i) EXPECT_NEAR(both[768 + i], one[i], 1e-12);
}

TEST(Forward, DecoderPatchSizeTwo) {
  auto c = small_config(Variant::deco);
  c.decoder.patch_size = 2;
  auto p = init_parameters<double>(c, 1);
  randomize(p, 11);
  std::mt19937_64 rng(6);
  Tensor x = random_tensor({1, 16, 16, 3}, rng);
  std::vector<double> t{0.4};
  std::vector<int> y{0};
  Tensor v = evaluate_velocity(p, c, x, std::span<const double>(t), std::span<const int>(y));
  EXPECT_EQ(v.shape(), x.shape());
  EXPECT_TRUE(v.all_finite());
}

TEST(Forward, FloatTracksDouble) {
  auto c = small_config(Variant::deco);
  auto p = init_parameters<double>(c, 1);
  randomize(p, 12);
  auto pf = p.cast<float>();
  std::mt19937_64 rng(7);
  Tensor x = random_tensor({2, 16, 16, 3}, rng);
  std::vector<double> t{0.3, 0.6};
  std::vector<float> tf{0.3f, 0.6f};
  std::vector<int> y{0, 1};
  Tensor vd = evaluate_velocity(p, c, x, std::span<const double>(t), std::span<const int>(y));
  TensorF vf = evaluate_velocity(pf, c, x.cast<float>(), std::span<const float>(tf), std::span<const int>(y));
  double scale = 0;
  for (double v : vd.data()) scale = std::max(scale, std::abs(v));
  for (std::size_t i = 0; i < vd.size(); ++i) EXPECT_NEAR(vf[i], vd[i], 1e-4 * std::max(1.0, scale));
}

TEST(Gradient, EveryParameterMatchesFiniteDifferencesOnTinyModel) {
  for (Variant v : {Variant::deco, Variant::baseline}) {
    auto c = small_config(v, 8);
    c.dit.hidden_dim = 16;
    c.dit.time_freq_dim = 8;
    c.decoder.depth = 1;
    auto p = init_parameters<double>(c, 1);
    randomize(p, 13, 0.3);
    std::mt19937_64 rng(8);
    Tensor x = random_tensor({2, 8, 8, 3}, rng), target = random_tensor({2, 8, 8, 3}, rng);
    std::vector<double> t{0.25, 0.75};
    std::vector<int> y{1, 5};
    auto loss_of = [&](const ParameterStore<double>& w, ParameterStore<double>* grads) {
      Graph<double> g;
      ParamBinding<double> P(g, w, grads != nullptr);
      auto r = forward(P, c, x, std::span<const double>(t), std::span<const int>(y));
      Var<double> loss = mean(square(sub(r.velocity, g.constant(target))));
      if (grads) *grads = gradient(g, loss, P);
      return loss.value().item();
    };
    ParameterStore<double> grads;
    loss_of(p, &grads);
    const double h = 1e-6;
    std::mt19937_64 pick(99);
    for (std::size_t i = 0; i < p.size(); ++i) {
      // Three sampled coordinates per tensor.
      for (int k = 0; k < 3; ++k) {
        const std::size_t j = std::uniform_int_distribution<std::size_t>(0, p[i].size() - 1)(pick);
        auto pp = p, pm = p;
        pp[i][j] += h;
        pm[i][j] -= h;
        const double fd = (loss_of(pp, nullptr) - loss_of(pm, nullptr)) / (2 * h);
        EXPECT_NEAR(grads[i][j], fd, 1e-6 + 1e-5 * std::abs(fd)) << to_string(v) << " " << p.name(i) << "[" << j << "]";
      }
    }
  }
}
