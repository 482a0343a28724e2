#pragma once

#include <png.h>

#include <algorithm>
#include <cctype>
#include <csetjmp>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "deco/tensor.hpp"

namespace deco::app {

/// 8-bit interleaved RGB image.
struct Image8 {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> pixels;  // [height, width, 3]

  Image8() = default;
  Image8(std::size_t w, std::size_t h) : width(w), height(h), pixels(w * h * 3, 0) {}
  std::uint8_t* at(std::size_t y, std::size_t x) { return pixels.data() + (y * width + x) * 3; }
  const std::uint8_t* at(std::size_t y, std::size_t x) const { return pixels.data() + (y * width + x) * 3; }
};

class image_error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

inline FilePtr open_file(const std::filesystem::path& p, const char* mode) {
  FilePtr f(std::fopen(p.string().c_str(), mode));
  if (!f) throw image_error("cannot open '" + p.string() + "'");
  return f;
}

[[noreturn]] inline void png_fail(png_structp png, png_const_charp msg) {
  auto* what = static_cast<std::string*>(png_get_error_ptr(png));
  if (what) *what = msg;
  png_longjmp(png, 1);
}

inline void png_warn(png_structp, png_const_charp) {}


inline bool png_read_into(std::FILE* f, Image8* img, std::vector<png_bytep>* rows, std::string* err) {
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, err, detail::png_fail, detail::png_warn);
  if (!png) return false;
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    return false;
  }
  png_init_io(png, f);
  png_read_info(png, info);
  png_set_expand(png);
  png_set_strip_16(png);
  png_set_strip_alpha(png);
  png_set_gray_to_rgb(png);
  png_set_interlace_handling(png);
  png_read_update_info(png, info);
  *img = Image8(png_get_image_width(png, info), png_get_image_height(png, info));
  if (png_get_rowbytes(png, info) != img->width * 3) detail::png_fail(png, "unsupported channel layout");
  rows->resize(img->height);
  for (std::size_t y = 0; y < img->height; ++y) (*rows)[y] = img->at(y, 0);
  png_read_image(png, rows->data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return true;
}

inline bool png_write_from(std::FILE* f, const Image8* img, std::vector<png_bytep>* rows, std::string* err) {
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, err, detail::png_fail, detail::png_warn);
  if (!png) return false;
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    return false;
  }
  png_init_io(png, f);
  png_set_IHDR(png, info, png_uint_32(img->width), png_uint_32(img->height), 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  png_write_image(png, rows->data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return true;
}
}  // namespace detail

inline Image8 read_png(const std::filesystem::path& path) {
  auto f = detail::open_file(path, "rb");
  std::string err = "malformed PNG";
  Image8 img;
  std::vector<png_bytep> rows;
  if (!detail::png_read_into(f.get(), &img, &rows, &err)) throw image_error("'" + path.string() + "': " + err);
  return img;
}

inline void write_png(const std::filesystem::path& path, const Image8& img) {
  auto f = detail::open_file(path, "wb");
  std::string err = "PNG encode failed";
  std::vector<png_bytep> rows(img.height);
  for (std::size_t y = 0; y < img.height; ++y) rows[y] = const_cast<png_bytep>(img.at(y, 0));
  if (!detail::png_write_from(f.get(), &img, &rows, &err)) throw image_error("'" + path.string() + "': " + err);
  if (std::fflush(f.get()) != 0) throw image_error("write failed for '" + path.string() + "'");
}

/// Binary PPM (P6, maxval <= 255).
inline Image8 read_ppm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw image_error("cannot open '" + path.string() + "'");
  auto token = [&]() {
    std::string t;
    while (true) {
      int c = in.get();
      if (c == EOF) break;
      if (c == '#') {
        std::string skip;
        std::getline(in, skip);
        continue;
      }
      if (std::isspace(c)) {
        if (!t.empty()) break;
        continue;
      }
      t.push_back(char(c));
    }
    return t;
  };
  if (token() != "P6") throw image_error("'" + path.string() + "': not a binary PPM");
  std::size_t w = 0, h = 0, maxval = 0;
  try {
    w = std::stoul(token());
    h = std::stoul(token());
    maxval = std::stoul(token());
  } catch (const std::exception&) {
    throw image_error("'" + path.string() + "': malformed PPM header");
  }
  if (w == 0 || h == 0 || maxval == 0 || maxval > 255) throw image_error("'" + path.string() + "': unsupported PPM header");
  Image8 img(w, h);
  in.read(reinterpret_cast<char*>(img.pixels.data()), std::streamsize(img.pixels.size()));
  if (in.gcount() != std::streamsize(img.pixels.size())) throw image_error("'" + path.string() + "': truncated PPM data");
  if (maxval != 255)
    for (auto& v : img.pixels) v = std::uint8_t(std::min<std::size_t>(255, (std::size_t(v) * 255 + maxval / 2) / maxval));
  return img;
}

inline void write_ppm(const std::filesystem::path& path, const Image8& img) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw image_error("cannot open '" + path.string() + "' for writing");
  out << "P6\n" << img.width << ' ' << img.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.pixels.data()), std::streamsize(img.pixels.size()));
  if (!out) throw image_error("write failed for '" + path.string() + "'");
}

/// Dispatches on the file signature, so extensions are not trusted.
inline Image8 read_image(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw image_error("cannot open '" + path.string() + "'");
  unsigned char sig[8] = {};
  in.read(reinterpret_cast<char*>(sig), 8);
  if (in.gcount() >= 8 && png_sig_cmp(sig, 0, 8) == 0) return read_png(path);
  if (in.gcount() >= 2 && sig[0] == 'P' && sig[1] == '6') return read_ppm(path);
  throw image_error("'" + path.string() + "': unrecognized image format (expected PNG or binary PPM)");
}

/// PNG unless the extension is .ppm.
inline void write_image(const std::filesystem::path& path, const Image8& img) {
  if (path.extension() == ".ppm")
    write_ppm(path, img);
  else
    write_png(path, img);
}

/// [-1, 1] to 0..255 with round-half-up; out-of-range values saturate.
inline std::uint8_t to_byte(double v) {
  const double s = std::floor((std::clamp(v, -1.0, 1.0) + 1.0) * 127.5 + 0.5);
  return std::uint8_t(std::clamp(s, 0.0, 255.0));
}

inline double from_byte(std::uint8_t v) { return double(v) / 127.5 - 1.0; }

/// Image from an [H, W, 3] tensor in [-1, 1].
template <typename T>
Image8 tensor_to_image(const basic_tensor<T>& x) {
  if (x.rank() != 3 || x.dim(2) != 3) throw shape_error("tensor_to_image: expected [H,W,3], got " + shape_str(x.shape()));
  Image8 img(x.dim(1), x.dim(0));
  for (std::size_t i = 0; i < x.size(); ++i) img.pixels[i] = to_byte(double(x[i]));
  return img;
}

/// Tiles a batch [N, H, W, 3] row-major into `cols` columns with a `pad`-pixel gray gutter.
template <typename T>
Image8 image_grid(const basic_tensor<T>& batch, std::size_t cols, std::size_t pad = 1) {
  if (batch.rank() != 4 || batch.dim(3) != 3) throw shape_error("image_grid: expected [N,H,W,3], got " + shape_str(batch.shape()));
  const std::size_t n = batch.dim(0), h = batch.dim(1), w = batch.dim(2);
  cols = std::max<std::size_t>(1, std::min(cols, n));
  const std::size_t rows = (n + cols - 1) / cols;
  Image8 img(cols * w + (cols + 1) * pad, rows * h + (rows + 1) * pad);
  std::fill(img.pixels.begin(), img.pixels.end(), std::uint8_t(128));
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t oy = pad + (k / cols) * (h + pad), ox = pad + (k % cols) * (w + pad);
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x)
        for (std::size_t c = 0; c < 3; ++c) img.at(oy + y, ox + x)[c] = to_byte(double(batch[((k * h + y) * w + x) * 3 + c]));
  }
  return img;
}

/// Nearest-neighbour upscale by an integer factor.
inline Image8 upscale(const Image8& src, std::size_t factor) {
  Image8 out(src.width * factor, src.height * factor);
  for (std::size_t y = 0; y < out.height; ++y)
    for (std::size_t x = 0; x < out.width; ++x) std::copy_n(src.at(y / factor, x / factor), 3, out.at(y, x));
  return out;
}

/// Largest centered square.
inline Image8 center_crop(const Image8& src) {
  const std::size_t s = std::min(src.width, src.height);
  const std::size_t ox = (src.width - s) / 2, oy = (src.height - s) / 2;
  Image8 out(s, s);
  for (std::size_t y = 0; y < s; ++y) std::copy_n(src.at(oy + y, ox), s * 3, out.at(y, 0));
  return out;
}

/// Bilinear resampling with half-pixel centers, returned in [-1, 1] as [size, size, 3].
template <typename T>
basic_tensor<T> resize_bilinear(const Image8& src, std::size_t out_h, std::size_t out_w) {
  basic_tensor<T> out({out_h, out_w, 3});
  const double sy = double(src.height) / double(out_h), sx = double(src.width) / double(out_w);
  for (std::size_t y = 0; y < out_h; ++y) {
    const double fy = std::clamp((double(y) + 0.5) * sy - 0.5, 0.0, double(src.height - 1));
    const std::size_t y0 = std::size_t(fy), y1 = std::min(y0 + 1, src.height - 1);
    const double ay = fy - double(y0);
    for (std::size_t x = 0; x < out_w; ++x) {
      const double fx = std::clamp((double(x) + 0.5) * sx - 0.5, 0.0, double(src.width - 1));
      const std::size_t x0 = std::size_t(fx), x1 = std::min(x0 + 1, src.width - 1);
      const double ax = fx - double(x0);
      for (std::size_t c = 0; c < 3; ++c) {
        const double v = (1 - ay) * ((1 - ax) * src.at(y0, x0)[c] + ax * src.at(y0, x1)[c]) +
                         ay * ((1 - ax) * src.at(y1, x0)[c] + ax * src.at(y1, x1)[c]);
        out[(y * out_w + x) * 3 + c] = T(v / 127.5 - 1.0);
      }
    }
  }
  return out;
}

}  // namespace deco::app
