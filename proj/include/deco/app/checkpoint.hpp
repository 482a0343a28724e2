#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

#include "deco/tensor.hpp"

namespace deco::app {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

inline constexpr char kCheckpointMagic[4] = {'D', 'E', 'C', 'O'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

class checkpoint_error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class DType : std::uint8_t { f32 = 1, f64 = 2 };

inline std::size_t dtype_size(DType d) {
  switch (d) {
    case DType::f32: return 4;
    case DType::f64: return 8;
  }
  throw checkpoint_error("unknown element type " + std::to_string(int(d)));
}

template <typename T>
constexpr DType dtype_of() {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
  return std::is_same_v<T, float> ? DType::f32 : DType::f64;
}

struct NamedArray {
  std::string name;
  DType dtype = DType::f64;
  Shape shape;
  std::vector<char> bytes;  // little-endian raw elements

  template <typename T>
  static NamedArray from(std::string name, const basic_tensor<T>& t) {
    NamedArray a{std::move(name), dtype_of<T>(), t.shape(), std::vector<char>(t.size() * sizeof(T))};
    std::memcpy(a.bytes.data(), t.data().data(), a.bytes.size());
    return a;
  }

  /// Decodes into T, converting between element types when they differ.
  template <typename T>
  basic_tensor<T> to() const {
    basic_tensor<T> out(shape);
    if (dtype == DType::f32) {
      std::vector<float> v(out.size());
      std::memcpy(v.data(), bytes.data(), bytes.size());
      for (std::size_t i = 0; i < v.size(); ++i) out[i] = T(v[i]);
    } else {
      std::vector<double> v(out.size());
      std::memcpy(v.data(), bytes.data(), bytes.size());
      for (std::size_t i = 0; i < v.size(); ++i) out[i] = T(v[i]);
    }
    return out;
  }

  friend bool operator==(const NamedArray&, const NamedArray&) = default;
};

struct Checkpoint {
  std::uint64_t step = 0;
  std::vector<NamedArray> arrays;

  const NamedArray* find(const std::string& name) const {
    for (const auto& a : arrays)
      if (a.name == name) return &a;
    return nullptr;
  }
  const NamedArray& at(const std::string& name) const {
    if (auto* a = find(name)) return *a;
    throw checkpoint_error("checkpoint has no array named '" + name + "'");
  }

  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

namespace detail {

template <typename U>
void put(std::ostream& out, U v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename U>
U get(std::istream& in, const std::string& what) {
  U v{};
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  if (in.gcount() != std::streamsize(sizeof v)) throw checkpoint_error("truncated checkpoint while reading " + what);
  return v;
}

}  // namespace detail

/// Layout: "DECO", u32 version, u64 step, u32 array count, then per array
/// u32 name length, name, u8 dtype, u32 rank, u64 extents[rank], u64 byte count, raw bytes.
inline void write_checkpoint(std::ostream& out, const Checkpoint& ck, std::uint32_t version = kCheckpointVersion) {
  out.write(kCheckpointMagic, 4);
  detail::put(out, version);
  detail::put(out, ck.step);
  detail::put(out, std::uint32_t(ck.arrays.size()));
  for (const auto& a : ck.arrays) {
    if (a.bytes.size() != numel(a.shape) * dtype_size(a.dtype)) {
      throw checkpoint_error("array '" + a.name + "': byte count does not match shape " + shape_str(a.shape));
    }
    detail::put(out, std::uint32_t(a.name.size()));
    out.write(a.name.data(), std::streamsize(a.name.size()));
    detail::put(out, std::uint8_t(a.dtype));
    detail::put(out, std::uint32_t(a.shape.size()));
    for (auto d : a.shape) detail::put(out, std::uint64_t(d));
    detail::put(out, std::uint64_t(a.bytes.size()));
    out.write(a.bytes.data(), std::streamsize(a.bytes.size()));
  }
}

inline Checkpoint read_checkpoint(std::istream& in) {
  char magic[4] = {};
  in.read(magic, 4);
  if (in.gcount() != 4 || std::memcmp(magic, kCheckpointMagic, 4) != 0) throw checkpoint_error("not a checkpoint");
  const auto version = detail::get<std::uint32_t>(in, "version");
  if (version != kCheckpointVersion) {
    throw checkpoint_error("unsupported checkpoint version " + std::to_string(version) + " (expected " +
                           std::to_string(kCheckpointVersion) + ")");
  }
  Checkpoint ck;
  ck.step = detail::get<std::uint64_t>(in, "step");
  const auto count = detail::get<std::uint32_t>(in, "array count");
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedArray a;
    const auto len = detail::get<std::uint32_t>(in, "array name");
    if (len > (1u << 16)) throw checkpoint_error("corrupt checkpoint: array name length " + std::to_string(len));
    a.name.resize(len);
    in.read(a.name.data(), len);
    if (in.gcount() != std::streamsize(len)) throw checkpoint_error("truncated checkpoint while reading array name");
    const auto dt = detail::get<std::uint8_t>(in, "dtype of '" + a.name + "'");
    if (dt != std::uint8_t(DType::f32) && dt != std::uint8_t(DType::f64)) {
      throw checkpoint_error("array '" + a.name + "': unknown element type " + std::to_string(dt));
    }
    a.dtype = DType(dt);
    const auto rank = detail::get<std::uint32_t>(in, "rank of '" + a.name + "'");
    if (rank > 16) throw checkpoint_error("array '" + a.name + "': implausible rank " + std::to_string(rank));
    for (std::uint32_t r = 0; r < rank; ++r) a.shape.push_back(std::size_t(detail::get<std::uint64_t>(in, "shape of '" + a.name + "'")));
    const auto nbytes = detail::get<std::uint64_t>(in, "byte count of '" + a.name + "'");
    if (nbytes != numel(a.shape) * dtype_size(a.dtype)) {
      throw checkpoint_error("array '" + a.name + "': byte count " + std::to_string(nbytes) + " does not match shape " +
                             shape_str(a.shape));
    }
    a.bytes.resize(nbytes);
    in.read(a.bytes.data(), std::streamsize(nbytes));
    if (in.gcount() != std::streamsize(nbytes)) {
      throw checkpoint_error("truncated array '" + a.name + "': expected " + std::to_string(nbytes) + " bytes, got " +
                             std::to_string(in.gcount()));
    }
    ck.arrays.push_back(std::move(a));
  }
  return ck;
}

/// Writes to a temporary sibling and renames, so readers never observe a partial file.
inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw checkpoint_error("cannot open '" + tmp.string() + "' for writing");
    write_checkpoint(out, ck);
    out.flush();
    if (!out) throw checkpoint_error("write failed for '" + tmp.string() + "'");
  }
  std::filesystem::rename(tmp, path);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw checkpoint_error("cannot open checkpoint '" + path.string() + "'");
  try {
    return read_checkpoint(in);
  } catch (const checkpoint_error& e) {
    throw checkpoint_error(path.string() + ": " + e.what());
  }
}

}  // namespace deco::app
