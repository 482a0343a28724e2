#pragma once

#include <openssl/evp.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "deco/app/config.hpp"

namespace deco::app {

inline std::string sha256_hex(const void* data, std::size_t len) {
  std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
  unsigned int n = 0;
  if (EVP_Digest(data, len, md.data(), &n, EVP_sha256(), nullptr) != 1) throw std::runtime_error("sha256 failed");
  static constexpr char hex[] = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < n; ++i) {
    out.push_back(hex[md[i] >> 4]);
    out.push_back(hex[md[i] & 15]);
  }
  return out;
}

inline std::string sha256_file(const std::filesystem::path& path) {
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1) throw std::runtime_error("sha256 init failed");
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path.string() + "' for hashing");
  std::vector<char> buf(1 << 16);
  while (in) {
    in.read(buf.data(), std::streamsize(buf.size()));
    if (in.gcount() > 0) EVP_DigestUpdate(ctx.get(), buf.data(), std::size_t(in.gcount()));
  }
  std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
  unsigned int n = 0;
  EVP_DigestFinal_ex(ctx.get(), md.data(), &n);
  static constexpr char hex[] = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < n; ++i) {
    out.push_back(hex[md[i] >> 4]);
    out.push_back(hex[md[i] & 15]);
  }
  return out;
}

/// Line-delimited JSON records, flushed one complete line at a time.
class MetricsLog {
 public:
  explicit MetricsLog(const std::filesystem::path& path) : path_(path), out_(path, std::ios::app) {
    if (!out_) throw std::runtime_error("cannot open metrics file '" + path.string() + "'");
  }
  void write(const json& record) {
    out_ << record.dump() << '\n';
    out_.flush();
    if (!out_) throw std::runtime_error("write failed for '" + path_.string() + "'");
  }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
  std::ofstream out_;
};

inline std::vector<json> read_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open '" + path.string() + "'");
  std::vector<json> out;
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) out.push_back(json::parse(line));
  return out;
}

/// Resolved config, seed and artifact hashes of one CLI invocation.
struct Manifest {
  std::string command;
  RunConfig config;
  std::uint64_t seed = 0;
  std::vector<std::filesystem::path> artifacts;
  json extra = json::object();

  json to_json_doc(const std::filesystem::path& base) const {
    json arts = json::object();
    for (const auto& a : artifacts) arts[std::filesystem::relative(a, base).generic_string()] = sha256_file(a);
    return json{{"command", command}, {"seed", seed}, {"config", to_json(config)}, {"artifacts", arts}, {"extra", extra}};
  }

  /// Writes <dir>/manifest_<command>.json.
  std::filesystem::path write(const std::filesystem::path& dir) const {
    const auto path = dir / ("manifest_" + command + ".json");
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write manifest '" + path.string() + "'");
    out << to_json_doc(dir).dump(2) << '\n';
    return path;
  }
};

}  // namespace deco::app
