#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "deco/tensor.hpp"

namespace deco::freq {

using Table8 = std::array<std::array<int, 8>, 8>;
using Weights8 = std::array<std::array<double, 8>, 8>;

// JPEG Annex K luminance and chrominance tables, row-major by (vertical, horizontal) frequency.
inline constexpr Table8 kBaseLuma = {{
    {16, 11, 10, 16, 24, 40, 51, 61},
    {12, 12, 14, 19, 26, 58, 60, 55},
    {14, 13, 16, 24, 40, 57, 69, 56},
    {14, 17, 22, 29, 51, 87, 80, 62},
    {18, 22, 37, 56, 68, 109, 103, 77},
    {24, 35, 55, 64, 81, 104, 113, 92},
    {49, 64, 78, 87, 103, 121, 120, 101},
    {72, 92, 95, 98, 112, 100, 103, 99},
}};

inline constexpr Table8 kBaseChroma = {{
    {17, 18, 24, 47, 99, 99, 99, 99},
    {18, 21, 26, 66, 99, 99, 99, 99},
    {24, 26, 56, 99, 99, 99, 99, 99},
    {47, 66, 99, 99, 99, 99, 99, 99},
    {99, 99, 99, 99, 99, 99, 99, 99},
    {99, 99, 99, 99, 99, 99, 99, 99},
    {99, 99, 99, 99, 99, 99, 99, 99},
    {99, 99, 99, 99, 99, 99, 99, 99},
}};

// Full-range BT.601 RGB -> YCbCr without the +128 chroma offset.
inline constexpr std::array<std::array<double, 3>, 3> kRgbToYcbcr = {{
    {0.299, 0.587, 0.114},
    {-0.168736, -0.331264, 0.5},
    {0.5, -0.418688, -0.081312},
}};

/// Exact numerical inverse of kRgbToYcbcr.
inline const std::array<std::array<double, 3>, 3>& ycbcr_to_rgb_matrix() {
  static const auto inv = [] {
    const auto& m = kRgbToYcbcr;
    std::array<std::array<double, 3>, 3> r{};
    const double det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0]) +
                       m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) {
        const int a = (j + 1) % 3, b = (j + 2) % 3, c = (i + 1) % 3, d = (i + 2) % 3;
        r[i][j] = (m[a][c] * m[b][d] - m[a][d] * m[b][c]) / det;
      }
    return r;
  }();
  return inv;
}

namespace detail {
template <typename T>
basic_tensor<T> apply_color_matrix(const basic_tensor<T>& v, const std::array<std::array<double, 3>, 3>& m, const char* op) {
  if (v.rank() == 0 || v.shape().back() != 3) throw shape_error(std::string(op) + ": expected 3 channels in the last axis, got " + shape_str(v.shape()));
  basic_tensor<T> out(v.shape());
  for (std::size_t i = 0; i < v.size(); i += 3) {
    const double r = v[i], g = v[i + 1], b = v[i + 2];
    for (int c = 0; c < 3; ++c) out[i + c] = T(m[c][0] * r + m[c][1] * g + m[c][2] * b);
  }
  return out;
}
}  // namespace detail

/// Linear color transform on [..., 3]; inputs may be any real (signed velocities included).
template <typename T>
basic_tensor<T> rgb_to_ycbcr(const basic_tensor<T>& v) {
  return detail::apply_color_matrix(v, kRgbToYcbcr, "rgb_to_ycbcr");
}

template <typename T>
basic_tensor<T> ycbcr_to_rgb(const basic_tensor<T>& v) {
  return detail::apply_color_matrix(v, ycbcr_to_rgb_matrix(), "ycbcr_to_rgb");
}

/// Orthonormal DCT-II basis: basis[u * n + x] = alpha(u) cos((2x + 1) u pi / 2n).
inline std::vector<double> dct_basis(std::size_t n) {
  std::vector<double> c(n * n);
  for (std::size_t u = 0; u < n; ++u) {
    const double a = u == 0 ? std::sqrt(1.0 / double(n)) : std::sqrt(2.0 / double(n));
    for (std::size_t x = 0; x < n; ++x) c[u * n + x] = a * std::cos(double(2 * x + 1) * double(u) * std::numbers::pi / double(2 * n));
  }
  return c;
}

/// Block transform coefficients laid out in place: block (by, bx) occupies the same rows and
/// columns as the spatial block it came from.
template <typename T>
struct DctCoefficients {
  std::size_t block = 8;
  basic_tensor<T> coeffs;  // [H, W]

  std::size_t blocks_y() const { return coeffs.dim(0) / block; }
  std::size_t blocks_x() const { return coeffs.dim(1) / block; }
  T at(std::size_t by, std::size_t bx, std::size_t u, std::size_t v) const {
    return coeffs[(by * block + u) * coeffs.dim(1) + bx * block + v];
  }
};

namespace detail {
template <typename T>
basic_tensor<T> block_transform(const basic_tensor<T>& plane, std::size_t n, bool inverse, const char* op) {
  if (plane.rank() != 2) throw shape_error(std::string(op) + ": expected a rank-2 plane, got " + shape_str(plane.shape()));
  if (n == 0 || plane.dim(0) % n != 0 || plane.dim(1) % n != 0) {
    throw shape_error(std::string(op) + ": extents " + shape_str(plane.shape()) + " not divisible by block " + std::to_string(n));
  }
  const auto c = dct_basis(n);
  const std::size_t h = plane.dim(0), w = plane.dim(1);
  basic_tensor<T> out(plane.shape());
  std::vector<double> blk(n * n), tmp(n * n);
  for (std::size_t by = 0; by < h; by += n)
    for (std::size_t bx = 0; bx < w; bx += n) {
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) blk[i * n + j] = plane[(by + i) * w + bx + j];
      // forward: C X C^T, inverse: C^T X C
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
          double s = 0;
          for (std::size_t k = 0; k < n; ++k) s += (inverse ? c[k * n + i] : c[i * n + k]) * blk[k * n + j];
          tmp[i * n + j] = s;
        }
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
          double s = 0;
          for (std::size_t k = 0; k < n; ++k) s += tmp[i * n + k] * (inverse ? c[k * n + j] : c[j * n + k]);
          out[(by + i) * w + bx + j] = T(s);
        }
    }
  return out;
}
}  // namespace detail

/// Orthonormal type-II DCT of each non-overlapping block x block tile. No implicit padding.
template <typename T>
DctCoefficients<T> block_dct(const basic_tensor<T>& plane, std::size_t block = 8) {
  return DctCoefficients<T>{block, detail::block_transform(plane, block, false, "block_dct")};
}

template <typename T>
basic_tensor<T> inverse_block_dct(const DctCoefficients<T>& c) {
  return detail::block_transform(c.coeffs, c.block, true, "inverse_block_dct");
}

/// Zigzag scan of an n x n block as (row, col) pairs, low to high frequency.
inline std::vector<std::pair<int, int>> zigzag_order(std::size_t n = 8) {
  std::vector<std::pair<int, int>> out;
  out.reserve(n * n);
  const int N = static_cast<int>(n);
  for (int s = 0; s <= 2 * N - 2; ++s) {
    if (s % 2 == 0) {
      for (int r = std::min(s, N - 1); r >= 0 && s - r < N; --r) out.emplace_back(r, s - r);
    } else {
      for (int r = std::max(0, s - N + 1); r <= s && r < N; ++r) out.emplace_back(r, s - r);
    }
  }
  return out;
}

/// Inverse of zigzag_order: index[row * n + col] = zigzag position.
inline std::vector<std::size_t> zigzag_index(std::size_t n = 8) {
  std::vector<std::size_t> idx(n * n);
  const auto order = zigzag_order(n);
  for (std::size_t k = 0; k < order.size(); ++k) idx[std::size_t(order[k].first) * n + std::size_t(order[k].second)] = k;
  return idx;
}

struct QuantTables {
  Table8 base_luma = kBaseLuma;
  Table8 base_chroma = kBaseChroma;
  int quality = 50;
  Table8 scaled_luma{};
  Table8 scaled_chroma{};
};

/// Q_cur = max(1, floor((Q_base * (100 - q) + 25) / 50)), defined for 50 <= q <= 100.
inline QuantTables scale_quant_tables(int quality) {
  if (quality < 50 || quality > 100) {
    throw std::invalid_argument("scale_quant_tables: quality " + std::to_string(quality) + " outside [50, 100]");
  }
  QuantTables t;
  t.quality = quality;
  auto scale = [quality](int base) { return std::max(1, (base * (100 - quality) + 25) / 50); };
  for (int i = 0; i < 8; ++i)
    for (int j = 0; j < 8; ++j) {
      t.scaled_luma[i][j] = scale(t.base_luma[i][j]);
      t.scaled_chroma[i][j] = scale(t.base_chroma[i][j]);
    }
  return t;
}

struct FrequencyWeightSet {
  Weights8 luma{};
  Weights8 chroma{};

  /// Weight table for a YCbCr channel index; Cb and Cr share the chroma table.
  const Weights8& channel(std::size_t c) const { return c == 0 ? luma : chroma; }
};

/// w = (1 / Q_cur) / mean(1 / Q_cur), per table.
inline FrequencyWeightSet frequency_weights(const QuantTables& tables) {
  auto normalize = [](const Table8& q) {
    Weights8 w{};
    double mean = 0;
    for (int i = 0; i < 8; ++i)
      for (int j = 0; j < 8; ++j) {
        w[i][j] = 1.0 / double(q[i][j]);
        mean += w[i][j];
      }
    mean /= 64.0;
    for (auto& row : w)
      for (auto& v : row) v /= mean;
    return w;
  };
  return FrequencyWeightSet{normalize(tables.scaled_luma), normalize(tables.scaled_chroma)};
}

inline FrequencyWeightSet frequency_weights(int quality) { return frequency_weights(scale_quant_tables(quality)); }

/// Blockwise DCT of each channel of [H, W, C] (or [B, H, W, C]); output has the same layout.
template <typename T>
basic_tensor<T> block_dct_channels(const basic_tensor<T>& x, std::size_t block = 8) {
  if (x.rank() != 3 && x.rank() != 4) throw shape_error("block_dct_channels: expected [H,W,C] or [B,H,W,C], got " + shape_str(x.shape()));
  const std::size_t b = x.rank() == 4 ? x.dim(0) : 1;
  const std::size_t h = x.dim(x.rank() - 3), w = x.dim(x.rank() - 2), c = x.dim(x.rank() - 1);
  basic_tensor<T> out(x.shape());
  basic_tensor<T> plane({h, w});
  for (std::size_t bi = 0; bi < b; ++bi)
    for (std::size_t ch = 0; ch < c; ++ch) {
      for (std::size_t i = 0; i < h * w; ++i) plane[i] = x[(bi * h * w + i) * c + ch];
      auto coeffs = block_dct(plane, block).coeffs;
      for (std::size_t i = 0; i < h * w; ++i) out[(bi * h * w + i) * c + ch] = coeffs[i];
    }
  return out;
}

/// The frequency transform used by the frequency-aware loss: YCbCr, then per-channel 8x8 DCT.
template <typename T>
basic_tensor<T> frequency_transform(const basic_tensor<T>& v) {
  return block_dct_channels(rgb_to_ycbcr(v), 8);
}

}  // namespace deco::freq
