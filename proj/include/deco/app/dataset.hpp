#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <cstdio>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "deco/app/image_io.hpp"
#include "deco/tensor.hpp"

namespace deco::app {

enum class ShapeKind { circle, square, triangle };

struct SyntheticDatasetSpec {
  std::size_t num_classes = 8;
  std::size_t image_size = 32;
  std::size_t count = 4096;
  double noise = 0.1;  // background noise amplitude, uniform in [-noise, noise]
  std::uint64_t seed = 0;

  std::vector<std::string> violations() const {
    std::vector<std::string> v;
    if (num_classes < 1) v.push_back("data.num_classes must be >= 1");
    if (image_size < 4) v.push_back("data.image_size must be >= 4");
    if (count < 1) v.push_back("data.count must be >= 1");
    if (!(noise >= 0.0 && noise < 0.5)) v.push_back("data.noise must lie in [0, 0.5)");
    return v;
  }
};

/// Images [N, H, W, 3] in [-1, 1] with integer labels.
struct LabeledImages {
  TensorF images;
  std::vector<int> labels;
  std::vector<std::string> class_names;
  std::vector<std::uint8_t> foreground;  // [N, H, W]; synthetic sets only

  std::size_t size() const { return labels.size(); }
  std::size_t height() const { return images.dim(1); }
  std::size_t width() const { return images.dim(2); }
};

/// Fully saturated hue k / K mapped to [-1, 1].
inline std::array<double, 3> class_hue(std::size_t k, std::size_t num_classes) {
  const double h = 6.0 * double(k % num_classes) / double(num_classes);
  const int sector = int(std::floor(h)) % 6;
  const double f = h - std::floor(h);
  std::array<double, 3> rgb{};
  switch (sector) {
    case 0: rgb = {1, f, 0}; break;
    case 1: rgb = {1 - f, 1, 0}; break;
    case 2: rgb = {0, 1, f}; break;
    case 3: rgb = {0, 1 - f, 1}; break;
    case 4: rgb = {f, 0, 1}; break;
    default: rgb = {1, 0, 1 - f}; break;
  }
  for (auto& c : rgb) c = 2.0 * c - 1.0;
  return rgb;
}

inline bool inside_shape(ShapeKind kind, double px, double py, double cx, double cy, double r) {
  const double dx = px - cx, dy = py - cy;
  switch (kind) {
    case ShapeKind::circle: return dx * dx + dy * dy <= r * r;
    case ShapeKind::square: return std::abs(dx) <= 0.8 * r && std::abs(dy) <= 0.8 * r;
    case ShapeKind::triangle: {
      const double s = std::sqrt(3.0) / 2.0;
      const double ax = 0, ay = -r, bx = -s * r, by = 0.5 * r, qx = s * r, qy = 0.5 * r;
      auto edge = [&](double x0, double y0, double x1, double y1) { return (x1 - x0) * (dy - y0) - (y1 - y0) * (dx - x0); };
      const double e0 = edge(ax, ay, bx, by), e1 = edge(bx, by, qx, qy), e2 = edge(qx, qy, ax, ay);
      return (e0 <= 0 && e1 <= 0 && e2 <= 0) || (e0 >= 0 && e1 >= 0 && e2 >= 0);
    }
  }
  return false;
}

/// Image i has label i mod K and its own RNG stream derived from (seed, i).
inline LabeledImages generate_synthetic_dataset(const SyntheticDatasetSpec& spec) {
  if (auto v = spec.violations(); !v.empty()) throw std::invalid_argument("synthetic dataset: " + v.front());
  const std::size_t n = spec.count, s = spec.image_size, k = spec.num_classes;
  LabeledImages ds;
  ds.images = TensorF({n, s, s, 3});
  ds.labels.resize(n);
  ds.foreground.assign(n * s * s, 0);
  for (std::size_t c = 0; c < k; ++c) ds.class_names.push_back("class_" + std::to_string(c));
  for (std::size_t i = 0; i < n; ++i) {
    std::seed_seq seq{std::uint32_t(spec.seed), std::uint32_t(spec.seed >> 32), std::uint32_t(i), std::uint32_t(i >> 32)};
    std::mt19937_64 rng(seq);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const int label = int(i % k);
    ds.labels[i] = label;
    const auto kind = ShapeKind(std::uniform_int_distribution<int>(0, 2)(rng));
    const double r = double(s) * (0.18 + 0.14 * unit(rng));
    const double cx = r + (double(s) - 2 * r) * unit(rng), cy = r + (double(s) - 2 * r) * unit(rng);
    const auto hue = class_hue(std::size_t(label), k);
    for (std::size_t y = 0; y < s; ++y)
      for (std::size_t x = 0; x < s; ++x) {
        const std::size_t pix = (i * s + y) * s + x;
        const bool fg = inside_shape(kind, double(x) + 0.5, double(y) + 0.5, cx, cy, r);
        ds.foreground[pix] = fg;
        for (std::size_t c = 0; c < 3; ++c) {
          const double noise = spec.noise * (2.0 * unit(rng) - 1.0);
          ds.images[pix * 3 + c] = float(fg ? hue[c] : noise);
        }
      }
  }
  return ds;
}

/// One subdirectory per class (sorted by name), images sorted by path within each class.
inline LabeledImages load_image_directory(const std::filesystem::path& root, std::size_t size) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(root)) throw std::invalid_argument("image directory '" + root.string() + "' does not exist");
  std::vector<fs::path> classes;
  for (const auto& e : fs::directory_iterator(root))
    if (e.is_directory() && e.path().filename().string().front() != '.') classes.push_back(e.path());
  std::sort(classes.begin(), classes.end());
  if (classes.empty()) throw std::invalid_argument("image directory '" + root.string() + "' has no class subdirectories");

  std::vector<std::pair<fs::path, int>> files;
  LabeledImages ds;
  for (std::size_t c = 0; c < classes.size(); ++c) {
    std::vector<fs::path> imgs;
    for (const auto& e : fs::directory_iterator(classes[c]))
      if (e.is_regular_file() && e.path().filename().string().front() != '.') imgs.push_back(e.path());
    if (imgs.empty()) throw std::invalid_argument("class directory '" + classes[c].string() + "' contains no images");
    std::sort(imgs.begin(), imgs.end());
    for (auto& p : imgs) files.emplace_back(std::move(p), int(c));
    ds.class_names.push_back(classes[c].filename().string());
  }
  ds.images = TensorF({files.size(), size, size, 3});
  ds.labels.resize(files.size());
  const std::size_t per = size * size * 3;
  for (std::size_t i = 0; i < files.size(); ++i) {
    const auto img = resize_bilinear<float>(center_crop(read_image(files[i].first)), size, size);
    std::copy(img.data().begin(), img.data().end(), ds.images.data().begin() + i * per);
    ds.labels[i] = files[i].second;
  }
  return ds;
}

/// Materializes dataset images as class_name/NNNNN.png under `root`.
inline std::vector<std::filesystem::path> write_image_directory(const LabeledImages& ds, const std::filesystem::path& root) {
  namespace fs = std::filesystem;
  const std::size_t h = ds.height(), w = ds.width(), per = h * w * 3;
  std::vector<fs::path> written;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const fs::path dir = root / ds.class_names.at(std::size_t(ds.labels[i]));
    fs::create_directories(dir);
    TensorF img({h, w, 3});
    std::copy_n(ds.images.data().begin() + i * per, per, img.data().begin());
    char name[32];
    std::snprintf(name, sizeof name, "%05zu.png", i);
    write_png(dir / name, tensor_to_image(img));
    written.push_back(dir / name);
  }
  return written;
}

/// Copies the selected samples into a [B, H, W, 3] batch.
template <typename T>
basic_tensor<T> gather_images(const LabeledImages& ds, std::span<const std::size_t> indices) {
  const std::size_t per = ds.height() * ds.width() * 3;
  basic_tensor<T> out({indices.size(), ds.height(), ds.width(), 3});
  for (std::size_t b = 0; b < indices.size(); ++b) {
    if (indices[b] >= ds.size()) throw std::out_of_range("gather_images: index " + std::to_string(indices[b]) + " out of range");
    for (std::size_t j = 0; j < per; ++j) out[b * per + j] = T(ds.images[indices[b] * per + j]);
  }
  return out;
}

inline std::vector<int> gather_labels(const LabeledImages& ds, std::span<const std::size_t> indices) {
  std::vector<int> y;
  y.reserve(indices.size());
  for (auto i : indices) y.push_back(ds.labels.at(i));
  return y;
}

}  // namespace deco::app
