#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "deco/freq.hpp"
#include "deco/tensor.hpp"

namespace deco::spectral {

struct EnergySpectrum {
  std::size_t block_size = 8;
  std::size_t blocks = 0;          // blocks x channels accumulated
  std::vector<double> raw;         // summed squared coefficients per zigzag index
  std::vector<double> normalized;  // log(1 + raw / blocks) / max

  std::vector<double> mean_energy() const {
    std::vector<double> m(raw.size());
    for (std::size_t i = 0; i < raw.size(); ++i) m[i] = blocks ? raw[i] / double(blocks) : 0.0;
    return m;
  }
};

/// Streaming DCT energy accumulation over [H, W, C] or [N, H, W, C] tensors.
class SpectrumAccumulator {
 public:
  explicit SpectrumAccumulator(std::size_t block_size = 8)
      : block_(block_size), zig_(freq::zigzag_index(block_size)), basis_(freq::dct_basis(block_size)), raw_(block_size * block_size, 0.0) {
    if (block_size == 0) throw std::invalid_argument("spectrum: block size must be positive");
  }

  template <typename T>
  void add(const basic_tensor<T>& x) {
    if (x.rank() != 3 && x.rank() != 4) throw shape_error("dct_energy_spectrum: expected [H,W,C] or [N,H,W,C], got " + shape_str(x.shape()));
    const std::size_t n = x.rank() == 4 ? x.dim(0) : 1;
    const std::size_t h = x.dim(x.rank() - 3), w = x.dim(x.rank() - 2), c = x.dim(x.rank() - 1);
    if (h % block_ != 0 || w % block_ != 0) {
      throw shape_error("dct_energy_spectrum: extents " + std::to_string(h) + "x" + std::to_string(w) + " not divisible by block " +
                        std::to_string(block_));
    }
    const std::size_t b = block_;
    std::vector<double> blk(b * b), tmp(b * b);
    for (std::size_t img = 0; img < n; ++img)
      for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t by = 0; by < h; by += b)
          for (std::size_t bx = 0; bx < w; bx += b) {
            for (std::size_t i = 0; i < b; ++i)
              for (std::size_t j = 0; j < b; ++j) blk[i * b + j] = double(x[((img * h + by + i) * w + bx + j) * c + ch]);
            for (std::size_t i = 0; i < b; ++i)
              for (std::size_t j = 0; j < b; ++j) {
                double s = 0;
                for (std::size_t k = 0; k < b; ++k) s += basis_[i * b + k] * blk[k * b + j];
                tmp[i * b + j] = s;
              }
            for (std::size_t i = 0; i < b; ++i)
              for (std::size_t j = 0; j < b; ++j) {
                double s = 0;
                for (std::size_t k = 0; k < b; ++k) s += tmp[i * b + k] * basis_[j * b + k];
                raw_[zig_[i * b + j]] += s * s;
              }
            ++blocks_;
          }
  }

  EnergySpectrum finish() const {
    EnergySpectrum s;
    s.block_size = block_;
    s.blocks = blocks_;
    s.raw = raw_;
    s.normalized.assign(raw_.size(), 0.0);
    if (blocks_ == 0) return s;
    double mx = 0;
    for (std::size_t i = 0; i < raw_.size(); ++i) {
      s.normalized[i] = std::log1p(raw_[i] / double(blocks_));
      mx = std::max(mx, s.normalized[i]);
    }
    if (mx > 0)
      for (auto& v : s.normalized) v /= mx;
    return s;
  }

 private:
  std::size_t block_;
  std::vector<std::size_t> zig_;
  std::vector<double> basis_;
  std::vector<double> raw_;
  std::size_t blocks_ = 0;
};

/// DCT energy spectrum pooled over every channel and block of every tensor in the sequence.
template <typename T>
EnergySpectrum dct_energy_spectrum(const std::vector<basic_tensor<T>>& tensors, std::size_t block_size = 8) {
  SpectrumAccumulator acc(block_size);
  for (const auto& t : tensors) acc.add(t);
  return acc.finish();
}

/// Share of energy at zigzag indices >= cutoff.
inline double highfreq_fraction(const std::vector<double>& raw, std::size_t cutoff = 32) {
  double total = 0, high = 0;
  for (std::size_t i = 0; i < raw.size(); ++i) {
    total += raw[i];
    if (i >= cutoff) high += raw[i];
  }
  if (!(total > 0)) throw std::invalid_argument("highfreq_fraction: total energy is zero");
  return high / total;
}

// ---------------------------------------------------------------------------
// K-means

struct KMeansResult {
  std::vector<int> labels;
  Tensor centroids;                     // [k, d]
  std::vector<double> inertia_history;  // after each assignment pass
  std::size_t iterations = 0;
};

namespace detail {
inline double sq_dist(const double* a, const double* b, std::size_t d) {
  double s = 0;
  for (std::size_t i = 0; i < d; ++i) {
    const double t = a[i] - b[i];
    s += t * t;
  }
  return s;
}
}  // namespace detail

/// Lloyd's algorithm on points [n, d]. Seeding: one seeded random point, then repeatedly the point
/// farthest from its nearest chosen centroid. Empty clusters restart at the current farthest point.
template <typename T>
KMeansResult kmeans(const basic_tensor<T>& points, std::size_t k, std::uint64_t seed, std::size_t max_iter = 100) {
  if (points.rank() != 2) throw shape_error("kmeans: expected [n, d], got " + shape_str(points.shape()));
  const std::size_t n = points.dim(0), d = points.dim(1);
  if (k == 0 || n < k) throw std::invalid_argument("kmeans: need n >= k >= 1, got n=" + std::to_string(n) + " k=" + std::to_string(k));
  std::vector<double> x(points.data().begin(), points.data().end());
  auto pt = [&](std::size_t i) { return x.data() + i * d; };

  KMeansResult r;
  r.centroids = Tensor({k, d});
  auto cen = [&](std::size_t j) { return r.centroids.data().data() + j * d; };
  std::mt19937_64 rng(seed);
  std::vector<double> nearest(n, std::numeric_limits<double>::infinity());
  std::size_t first = std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
  std::copy(pt(first), pt(first) + d, cen(0));
  for (std::size_t j = 1; j < k; ++j) {
    std::size_t far = 0;
    for (std::size_t i = 0; i < n; ++i) {
      nearest[i] = std::min(nearest[i], detail::sq_dist(pt(i), cen(j - 1), d));
      if (nearest[i] > nearest[far]) far = i;
    }
    std::copy(pt(far), pt(far) + d, cen(j));
  }

  r.labels.assign(n, 0);
  std::vector<double> dist(n);
  std::vector<double> sums(k * d);
  std::vector<std::size_t> counts(k);
  for (std::size_t it = 0; it < max_iter; ++it) {
    bool changed = it == 0;
    double inertia = 0;
    for (std::size_t i = 0; i < n; ++i) {
      int best = 0;
      double bd = std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < k; ++j) {
        const double dj = detail::sq_dist(pt(i), cen(j), d);
        if (dj < bd) {
          bd = dj;
          best = int(j);
        }
      }
      if (best != r.labels[i]) changed = true;
      r.labels[i] = best;
      dist[i] = bd;
      inertia += bd;
    }
    r.inertia_history.push_back(inertia);
    r.iterations = it + 1;
    if (!changed) break;

    std::fill(sums.begin(), sums.end(), 0.0);
    std::fill(counts.begin(), counts.end(), 0);
    for (std::size_t i = 0; i < n; ++i) {
      ++counts[r.labels[i]];
      for (std::size_t a = 0; a < d; ++a) sums[r.labels[i] * d + a] += pt(i)[a];
    }
    for (std::size_t j = 0; j < k; ++j) {
      if (counts[j] == 0) {
        const std::size_t far = std::size_t(std::max_element(dist.begin(), dist.end()) - dist.begin());
        std::copy(pt(far), pt(far) + d, cen(j));
        dist[far] = 0;
        continue;
      }
      for (std::size_t a = 0; a < d; ++a) cen(j)[a] = sums[j * d + a] / double(counts[j]);
    }
  }
  return r;
}

// ---------------------------------------------------------------------------
// Feature cluster maps

inline constexpr std::array<std::array<std::uint8_t, 3>, 8> kPalette = {{
    {230, 25, 75},
    {60, 180, 75},
    {255, 225, 25},
    {0, 130, 200},
    {245, 130, 48},
    {145, 30, 180},
    {70, 240, 240},
    {240, 50, 230},
}};

struct ClusterFrame {
  std::size_t timestep = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<int> labels;          // [H * W]
  std::vector<std::uint8_t> image;  // [H, W, 3] palette colors
};

/// Indices of `count` uniformly spaced frames out of `total`, first and last included.
inline std::vector<std::size_t> uniform_frames(std::size_t total, std::size_t count) {
  if (count == 0 || total < count) {
    throw std::invalid_argument("feature_cluster_map: need 1 <= num_frames <= T, got " + std::to_string(count) + " of " + std::to_string(total));
  }
  std::vector<std::size_t> idx(count);
  for (std::size_t i = 0; i < count; ++i) {
    idx[i] = count == 1 ? 0 : std::size_t(std::llround(double(i) * double(total - 1) / double(count - 1)));
  }
  return idx;
}

/// K-means over each selected frame's spatial grid of [T, H, W, C] features.
template <typename T>
std::vector<ClusterFrame> feature_cluster_map(const basic_tensor<T>& features, std::size_t k = 8, std::size_t num_frames = 4,
                                              std::uint64_t seed = 0) {
  if (features.rank() != 4) throw shape_error("feature_cluster_map: expected [T,H,W,C], got " + shape_str(features.shape()));
  const std::size_t tn = features.dim(0), h = features.dim(1), w = features.dim(2), c = features.dim(3);
  std::vector<ClusterFrame> out;
  for (std::size_t t : uniform_frames(tn, num_frames)) {
    basic_tensor<T> pts({h * w, c});
    std::copy(features.data().begin() + t * h * w * c, features.data().begin() + (t + 1) * h * w * c, pts.data().begin());
    auto km = kmeans(pts, k, seed);
    ClusterFrame f{t, h, w, km.labels, std::vector<std::uint8_t>(h * w * 3)};
    for (std::size_t i = 0; i < h * w; ++i) {
      const auto& col = kPalette[std::size_t(km.labels[i]) % kPalette.size()];
      std::copy(col.begin(), col.end(), f.image.begin() + i * 3);
    }
    out.push_back(std::move(f));
  }
  return out;
}

}  // namespace deco::spectral
