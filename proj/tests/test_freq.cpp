#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "deco/flow_match.hpp"
#include "deco/freq.hpp"
#include "test_util.hpp"

using namespace deco;
using namespace deco::freq;
using deco::testing::random_tensor;

namespace {

// Independently transcribed JPEG tables (ITU T.81 Annex K, Tables K.1 and K.2), row-major.
constexpr int kLumaRef[64] = {16, 11, 10, 16, 24,  40,  51,  61,  12, 12, 14, 19, 26,  58,  60,  55,
                              14, 13, 16, 24, 40,  57,  69,  56,  14, 17, 22, 29, 51,  87,  80,  62,
                              18, 22, 37, 56, 68,  109, 103, 77,  24, 35, 55, 64, 81,  104, 113, 92,
                              49, 64, 78, 87, 103, 121, 120, 101, 72, 92, 95, 98, 112, 100, 103, 99};
constexpr int kChromaRef[64] = {17, 18, 24, 47, 99, 99, 99, 99, 18, 21, 26, 66, 99, 99, 99, 99, 24, 26, 56, 99, 99, 99,
                                99, 99, 47, 66, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99,
                                99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99};

// Natural-order position of the k-th zigzag coefficient, as tabulated by libjpeg.
constexpr int kNaturalOrder[64] = {0,  1,  8,  16, 9,  2,  3,  10, 17, 24, 32, 25, 18, 11, 4,  5,  12, 19, 26, 33, 40, 48,
                                   41, 34, 27, 20, 13, 6,  7,  14, 21, 28, 35, 42, 49, 56, 57, 50, 43, 36, 29, 22, 15, 23,
                                   30, 37, 44, 51, 58, 59, 52, 45, 38, 31, 39, 46, 53, 60, 61, 54, 47, 55, 62, 63};

// Direct evaluation of the orthonormal 2-D DCT-II definition for one 8x8 block.
double dct_coefficient(const Tensor& plane, std::size_t by, std::size_t bx, std::size_t u, std::size_t v) {
  const double au = u == 0 ? std::sqrt(0.125) : 0.5, av = v == 0 ? std::sqrt(0.125) : 0.5;
  double s = 0;
  for (std::size_t i = 0; i < 8; ++i)
    for (std::size_t j = 0; j < 8; ++j)
      s += plane[(by * 8 + i) * plane.dim(1) + bx * 8 + j] * std::cos((2.0 * i + 1) * u * std::numbers::pi / 16.0) *
           std::cos((2.0 * j + 1) * v * std::numbers::pi / 16.0);
  return au * av * s;
}

// libjpeg's integer quality scaling (jcparam.c), used as a second route to the same tables.
int libjpeg_scaled(int base, int quality) {
  const int scale = quality < 50 ? 5000 / quality : 200 - 2 * quality;
  const int q = (base * scale + 50) / 100;
  return std::clamp(q, 1, 255);
}

}  // namespace

TEST(Dct, MatchesDefinition) {
  std::mt19937_64 rng(1);
  Tensor plane = random_tensor({16, 24}, rng);
  auto c = block_dct(plane);
  ASSERT_EQ(c.blocks_y(), 2u);
  ASSERT_EQ(c.blocks_x(), 3u);
  for (std::size_t by = 0; by < 2; ++by)
    for (std::size_t bx = 0; bx < 3; ++bx)
      for (std::size_t u = 0; u < 8; ++u)
        for (std::size_t v = 0; v < 8; ++v) EXPECT_NEAR(c.at(by, bx, u, v), dct_coefficient(plane, by, bx, u, v), 1e-12);
}

TEST(Dct, RoundTripAndParseval) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 10; ++trial) {
    Tensor plane = random_tensor({32, 16}, rng, 3.0);
    auto c = block_dct(plane);
    EXPECT_LE(max_abs_diff(inverse_block_dct(c), plane), 1e-10);
    double e0 = 0, e1 = 0;
    for (double v : plane.data()) e0 += v * v;
    for (double v : c.coeffs.data()) e1 += v * v;
    EXPECT_LE(std::abs(e0 - e1) / e0, 1e-9);
  }
}

TEST(Dct, ConstantBlockIsPureDc) {
  Tensor plane({8, 8}, 2.0);
  auto c = block_dct(plane);
  EXPECT_NEAR(c.at(0, 0, 0, 0), 16.0, 1e-12);
  for (std::size_t i = 1; i < 64; ++i) EXPECT_NEAR(c.coeffs[i / 8 * 8 + i % 8], 0.0, 1e-12);
}

TEST(Dct, BasisIsOrthonormal) {
  const auto c = dct_basis(8);
  for (std::size_t a = 0; a < 8; ++a)
    for (std::size_t b = 0; b < 8; ++b) {
      double s = 0;
      for (std::size_t x = 0; x < 8; ++x) s += c[a * 8 + x] * c[b * 8 + x];
      EXPECT_NEAR(s, a == b ? 1.0 : 0.0, 1e-14);
    }
}

TEST(Dct, IndivisibleExtentsThrow) {
  EXPECT_THROW(block_dct(Tensor({12, 8})), shape_error);
  EXPECT_THROW(block_dct(Tensor({8, 8, 1})), shape_error);
  EXPECT_THROW(block_dct_channels(Tensor({8, 12, 3})), shape_error);
}

TEST(Zigzag, MatchesJpegNaturalOrder) {
  const auto order = zigzag_order(8);
  ASSERT_EQ(order.size(), 64u);
  for (std::size_t k = 0; k < 64; ++k) {
    EXPECT_EQ(order[k].first * 8 + order[k].second, kNaturalOrder[k]) << "position " << k;
  }
  const auto idx = zigzag_index(8);
  for (std::size_t k = 0; k < 64; ++k) EXPECT_EQ(idx[std::size_t(kNaturalOrder[k])], k);
}

TEST(Zigzag, GenericSizesArePermutations) {
  for (std::size_t n : {1u, 2u, 3u, 4u, 16u}) {
    auto idx = zigzag_index(n);
    std::vector<bool> seen(n * n, false);
    for (auto i : idx) {
      ASSERT_LT(i, n * n);
      EXPECT_FALSE(seen[i]);
      seen[i] = true;
    }
    // Anti-diagonal index r + c never decreases along the scan.
    auto order = zigzag_order(n);
    for (std::size_t k = 1; k < order.size(); ++k)
      EXPECT_GE(order[k].first + order[k].second, order[k - 1].first + order[k - 1].second);
  }
}

TEST(Quant, BaseTablesMatchReference) {
  for (int i = 0; i < 64; ++i) {
    EXPECT_EQ(kBaseLuma[i / 8][i % 8], kLumaRef[i]);
    EXPECT_EQ(kBaseChroma[i / 8][i % 8], kChromaRef[i]);
  }
}

TEST(Quant, QualityFiftyReproducesBaseAndHundredIsOnes) {
  auto q50 = scale_quant_tables(50), q100 = scale_quant_tables(100);
  for (int i = 0; i < 8; ++i)
    for (int j = 0; j < 8; ++j) {
      EXPECT_EQ(q50.scaled_luma[i][j], kBaseLuma[i][j]);
      EXPECT_EQ(q50.scaled_chroma[i][j], kBaseChroma[i][j]);
      EXPECT_EQ(q100.scaled_luma[i][j], 1);
      EXPECT_EQ(q100.scaled_chroma[i][j], 1);
    }
}

TEST(Quant, QualityEightyFiveExamples) {
  auto q = scale_quant_tables(85);
  EXPECT_EQ(q.scaled_luma[0][0], 5);  // base 16
  EXPECT_EQ(q.scaled_luma[7][7], 30);  // base 99
}

TEST(Quant, AgreesWithLibjpegScalingOverWholeRange) {
  for (int quality = 50; quality <= 100; ++quality) {
    auto q = scale_quant_tables(quality);
    for (int i = 0; i < 64; ++i) {
      EXPECT_EQ(q.scaled_luma[i / 8][i % 8], libjpeg_scaled(kLumaRef[i], quality)) << "q=" << quality << " i=" << i;
      EXPECT_EQ(q.scaled_chroma[i / 8][i % 8], libjpeg_scaled(kChromaRef[i], quality)) << "q=" << quality << " i=" << i;
    }
  }
}

TEST(Quant, OutOfRangeQualityThrows) {
  EXPECT_THROW(scale_quant_tables(49), std::invalid_argument);
  EXPECT_THROW(scale_quant_tables(101), std::invalid_argument);
}

TEST(Weights, MeanOneAndInverseToTable) {
  for (int quality : {50, 85, 100}) {
    auto tables = scale_quant_tables(quality);
    auto w = frequency_weights(tables);
    for (std::size_t c = 0; c < 3; ++c) {
      const auto& q = c == 0 ? tables.scaled_luma : tables.scaled_chroma;
      double mean = 0;
      for (int i = 0; i < 8; ++i)
        for (int j = 0; j < 8; ++j) mean += w.channel(c)[i][j];
      EXPECT_NEAR(mean / 64.0, 1.0, 1e-12);
      for (int i = 0; i < 8; ++i)
        for (int j = 0; j < 8; ++j) EXPECT_NEAR(w.channel(c)[i][j] * q[i][j], w.channel(c)[0][0] * q[0][0], 1e-12);
    }
  }
  auto ones = frequency_weights(100);
  for (auto& row : ones.luma)
    for (double v : row) EXPECT_DOUBLE_EQ(v, 1.0);
}

TEST(Color, Bt601LumaAndExactInverse) {
  EXPECT_NEAR(kRgbToYcbcr[0][0], 0.299, 1e-12);
  EXPECT_NEAR(kRgbToYcbcr[0][1], 0.587, 1e-12);
  EXPECT_NEAR(kRgbToYcbcr[0][2], 0.114, 1e-12);
  std::mt19937_64 rng(3);
  Tensor x = random_tensor({2, 8, 8, 3}, rng);
  EXPECT_LE(max_abs_diff(ycbcr_to_rgb(rgb_to_ycbcr(x)), x), 1e-13);
  // Gray pixels carry no chroma.
  Tensor gray({1, 1, 3}, 0.4);
  auto y = rgb_to_ycbcr(gray);
  EXPECT_NEAR(y[0], 0.4, 1e-14);
  EXPECT_NEAR(y[1], 0.0, 1e-14);
  EXPECT_NEAR(y[2], 0.0, 1e-14);
}

TEST(FrequencyTransform, GraphVersionMatchesTensorVersion) {
  std::mt19937_64 rng(4);
  Tensor v = random_tensor({2, 16, 8, 3}, rng);
  Tensor ref = frequency_transform(v);  // [B, H, W, 3], in-place block layout
  Graph<double> g;
  Tensor got = flow::frequency_transform(g.constant(v)).value();  // [B, 3, by, bx, 8, 8]
  ASSERT_EQ(got.shape(), (Shape{2, 3, 2, 1, 8, 8}));
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t by = 0; by < 2; ++by)
        for (std::size_t u = 0; u < 8; ++u)
          for (std::size_t w = 0; w < 8; ++w) {
            const double expect = ref[((b * 16 + by * 8 + u) * 8 + w) * 3 + c];
            // Graph layout stores (column frequency, row frequency) in the last two axes.
            EXPECT_NEAR(got[((((b * 3 + c) * 2 + by) * 1) * 8 + w) * 8 + u], expect, 1e-12);
          }
}

TEST(FrequencyTransform, IsLinear) {
  std::mt19937_64 rng(5);
  Tensor a = random_tensor({1, 8, 8, 3}, rng), b = random_tensor({1, 8, 8, 3}, rng);
  Tensor lhs = frequency_transform(a * 2.0 + b);
  Tensor rhs = frequency_transform(a) * 2.0 + frequency_transform(b);
  EXPECT_LE(max_abs_diff(lhs, rhs), 1e-12);
}
