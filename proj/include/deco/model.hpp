#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "deco/autodiff.hpp"
#include "deco/params.hpp"
#include "deco/tensor.hpp"

namespace deco::model {

struct DiTConfig {
  std::size_t depth = 4;
  std::size_t hidden_dim = 128;
  std::size_t heads = 4;
  std::size_t patch_size = 4;
  std::size_t num_classes = 8;  // label num_classes is the null (unconditional) class
  std::size_t image_height = 32;
  std::size_t image_width = 32;
  std::size_t channels = 3;
  std::size_t mlp_hidden = 0;  // SwiGLU width; 0 means 2 * hidden_dim
  std::size_t time_freq_dim = 256;

  std::size_t grid_h() const { return image_height / patch_size; }
  std::size_t grid_w() const { return image_width / patch_size; }
  std::size_t tokens() const { return grid_h() * grid_w(); }
  std::size_t patch_dim() const { return patch_size * patch_size * channels; }
  std::size_t head_dim() const { return hidden_dim / heads; }
  std::size_t swiglu_hidden() const { return mlp_hidden ? mlp_hidden : 2 * hidden_dim; }

  std::vector<std::string> violations() const {
    std::vector<std::string> v;
    if (depth == 0) v.push_back("dit.depth must be >= 1");
    if (heads == 0 || hidden_dim % heads != 0) v.push_back("dit.hidden_dim must be divisible by dit.heads");
    else if (head_dim() % 4 != 0) v.push_back("dit head dim (hidden_dim / heads) must be divisible by 4 for 2-D rotary encoding");
    if (hidden_dim % 4 != 0) v.push_back("dit.hidden_dim must be divisible by 4");
    if (patch_size == 0 || image_height % patch_size != 0 || image_width % patch_size != 0)
      v.push_back("image extents must be divisible by dit.patch_size");
    if (num_classes == 0) v.push_back("dit.num_classes must be >= 1");
    if (channels == 0) v.push_back("channels must be >= 1");
    if (time_freq_dim == 0 || time_freq_dim % 2 != 0) v.push_back("dit.time_freq_dim must be even and positive");
    return v;
  }
};

struct DecoderConfig {
  std::size_t hidden_dim = 32;
  std::size_t depth = 3;
  std::size_t patch_size = 1;
  std::size_t pos_dim = 32;
  std::size_t mlp_ratio = 4;
  std::size_t time_freq_dim = 256;

  std::vector<std::string> violations(const DiTConfig& dit) const {
    std::vector<std::string> v;
    if (hidden_dim == 0) v.push_back("decoder.hidden_dim must be > 0");
    if (depth == 0) v.push_back("decoder.depth must be >= 1");
    if (patch_size == 0 || dit.image_height % patch_size != 0 || dit.image_width % patch_size != 0)
      v.push_back("image extents must be divisible by decoder.patch_size");
    else if (dit.patch_size % patch_size != 0)
      v.push_back("dit.patch_size must be a multiple of decoder.patch_size");
    if (pos_dim % 4 != 0) v.push_back("decoder.pos_dim must be divisible by 4");
    if (mlp_ratio == 0) v.push_back("decoder.mlp_ratio must be >= 1");
    if (time_freq_dim == 0 || time_freq_dim % 2 != 0) v.push_back("decoder.time_freq_dim must be even and positive");
    return v;
  }
};

enum class Variant { deco, baseline };

inline const char* to_string(Variant v) { return v == Variant::deco ? "deco" : "baseline"; }
inline Variant variant_from_string(const std::string& s) {
  if (s == "deco") return Variant::deco;
  if (s == "baseline") return Variant::baseline;
  throw std::invalid_argument("unknown model variant '" + s + "' (expected deco|baseline)");
}

struct ModelConfig {
  DiTConfig dit;
  DecoderConfig decoder;
  Variant variant = Variant::deco;

  std::vector<std::string> violations() const {
    auto v = dit.violations();
    if (variant == Variant::deco) {
      auto d = decoder.violations(dit);
      v.insert(v.end(), d.begin(), d.end());
    }
    return v;
  }

  void validate() const {
    auto v = violations();
    if (v.empty()) return;
    std::string msg = "invalid model config:";
    for (const auto& s : v) msg += "\n  - " + s;
    throw std::invalid_argument(msg);
  }
};

// ---------------------------------------------------------------------------
// Fixed embeddings

/// Sinusoidal embedding of t in [0, 1] (scaled by 1000): [cos(args), sin(args)], shape [B, dim].
template <typename T>
basic_tensor<T> timestep_embedding(std::span<const T> t, std::size_t dim, double max_period = 10000.0) {
  const std::size_t half = dim / 2;
  basic_tensor<T> out({t.size(), dim});
  for (std::size_t b = 0; b < t.size(); ++b)
    for (std::size_t k = 0; k < half; ++k) {
      const double freq = std::exp(-std::log(max_period) * double(k) / double(half));
      const double arg = 1000.0 * double(t[b]) * freq;
      out[b * dim + k] = T(std::cos(arg));
      out[b * dim + half + k] = T(std::sin(arg));
    }
  return out;
}

/// Fixed 2-D sin/cos code [grid_h * grid_w, dim]: first half encodes the row, second the column.
template <typename T>
basic_tensor<T> sincos_2d(std::size_t grid_h, std::size_t grid_w, std::size_t dim) {
  const std::size_t quarter = dim / 4;
  basic_tensor<T> out({grid_h * grid_w, dim});
  for (std::size_t i = 0; i < grid_h; ++i)
    for (std::size_t j = 0; j < grid_w; ++j) {
      T* row = out.data().data() + (i * grid_w + j) * dim;
      for (std::size_t k = 0; k < quarter; ++k) {
        const double omega = 1.0 / std::pow(10000.0, double(k) / double(quarter));
        row[k] = T(std::sin(double(i) * omega));
        row[quarter + k] = T(std::cos(double(i) * omega));
        row[2 * quarter + k] = T(std::sin(double(j) * omega));
        row[3 * quarter + k] = T(std::cos(double(j) * omega));
      }
    }
  return out;
}

// ---------------------------------------------------------------------------
// Layout helpers

/// [B, H, W, C] -> [B, (H/p)(W/p), p*p*C], patches flattened row-major.
template <typename T>
basic_tensor<T> patchify(const basic_tensor<T>& x, std::size_t p) {
  if (x.rank() != 4 || p == 0 || x.dim(1) % p != 0 || x.dim(2) % p != 0) {
    throw shape_error("patchify: shape " + shape_str(x.shape()) + " not divisible by patch " + std::to_string(p));
  }
  const std::size_t b = x.dim(0), gh = x.dim(1) / p, gw = x.dim(2) / p, c = x.dim(3);
  auto y = permute(x.reshape({b, gh, p, gw, p, c}), {0, 1, 3, 2, 4, 5});
  return std::move(y).reshape({b, gh * gw, p * p * c});
}

template <typename T>
basic_tensor<T> unpatchify(const basic_tensor<T>& tokens, std::size_t p, std::size_t h, std::size_t w, std::size_t c) {
  if (tokens.rank() != 3 || p == 0 || h % p != 0 || w % p != 0 || tokens.dim(1) != (h / p) * (w / p) || tokens.dim(2) != p * p * c) {
    throw shape_error("unpatchify: tokens " + shape_str(tokens.shape()) + " do not match image " + std::to_string(h) + "x" +
                      std::to_string(w) + "x" + std::to_string(c) + " with patch " + std::to_string(p));
  }
  const std::size_t b = tokens.dim(0), gh = h / p, gw = w / p;
  auto y = permute(tokens.reshape({b, gh, gw, p, p, c}), {0, 1, 3, 2, 4, 5});
  return std::move(y).reshape({b, h, w, c});
}

/// Graph version of unpatchify for [B, gh*gw, p*p*C] -> [B, gh*p, gw*p, C].
template <typename T>
Var<T> unpatchify(Var<T> tokens, std::size_t p, std::size_t gh, std::size_t gw, std::size_t c) {
  const std::size_t b = tokens.shape()[0];
  auto y = permute(reshape(tokens, {b, gh, gw, p, p, c}), {0, 1, 3, 2, 4, 5});
  return reshape(y, {b, gh * p, gw * p, c});
}

// ---------------------------------------------------------------------------
// Parameters

namespace detail {

template <typename T>
struct Initializer {
  std::mt19937_64 rng;
  ParameterStore<T>& store;

  void uniform(const std::string& name, Shape shape, double bound) {
    std::uniform_real_distribution<double> dist(-bound, bound);
    basic_tensor<T> t(std::move(shape));
    for (auto& v : t.data()) v = T(dist(rng));
    store.add(name, std::move(t));
  }
  void linear(const std::string& name, std::size_t in, std::size_t out) {
    const double bound = 1.0 / std::sqrt(double(in));
    uniform(name + ".weight", {in, out}, bound);
    uniform(name + ".bias", {out}, bound);
  }
  void zero_linear(const std::string& name, std::size_t in, std::size_t out) {
    store.add(name + ".weight", basic_tensor<T>({in, out}));
    store.add(name + ".bias", basic_tensor<T>({out}));
  }
};

template <typename T>
void init_dit_block(Initializer<T>& init, const DiTConfig& c, std::size_t i) {
  const std::string pre = "dit.blocks." + std::to_string(i);
  const std::size_t d = c.hidden_dim;
  init.zero_linear(pre + ".adaln", d, 6 * d);
  init.linear(pre + ".attn.qkv", d, 3 * d);
  init.linear(pre + ".attn.proj", d, d);
  init.linear(pre + ".mlp.w1", d, c.swiglu_hidden());
  init.linear(pre + ".mlp.w3", d, c.swiglu_hidden());
  init.linear(pre + ".mlp.w2", c.swiglu_hidden(), d);
}

}  // namespace detail

/// Number of DiT blocks instantiated for a variant (the baseline keeps two extra blocks).
inline std::size_t dit_block_count(const ModelConfig& cfg) {
  return cfg.variant == Variant::deco ? cfg.dit.depth : cfg.dit.depth + 2;
}

/// Initializes every parameter. AdaLN gate producers and output heads start at zero; all other
/// linear layers draw from U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
template <typename T>
ParameterStore<T> init_parameters(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  ParameterStore<T> store;
  detail::Initializer<T> init{std::mt19937_64(seed), store};
  const auto& c = cfg.dit;
  const std::size_t d = c.hidden_dim;
  init.linear("dit.patch_embed", c.patch_dim(), d);
  init.linear("dit.t_embed.fc1", c.time_freq_dim, d);
  init.linear("dit.t_embed.fc2", d, d);
  init.uniform("dit.y_embed.table", {c.num_classes + 1, d}, 1.0);
  for (std::size_t i = 0; i < dit_block_count(cfg); ++i) detail::init_dit_block(init, c, i);
  if (cfg.variant == Variant::baseline) {
    init.zero_linear("head.adaln", d, 2 * d);
    init.zero_linear("head.linear", d, c.patch_dim());
    return store;
  }
  const auto& dc = cfg.decoder;
  const std::size_t s = dc.patch_size, r = c.patch_size / s, dd = dc.hidden_dim;
  init.linear("decoder.in_proj", s * s * c.channels + dc.pos_dim, dd);
  init.linear("decoder.cond_proj", d, r * r * dd);
  init.linear("decoder.t_embed", dc.time_freq_dim, dd);
  for (std::size_t i = 0; i < dc.depth; ++i) {
    const std::string pre = "decoder.blocks." + std::to_string(i);
    init.zero_linear(pre + ".mod", dd, 3 * dd);
    init.linear(pre + ".mlp.fc1", dd, dc.mlp_ratio * dd);
    init.linear(pre + ".mlp.fc2", dc.mlp_ratio * dd, dd);
  }
  init.zero_linear("decoder.out", dd, s * s * c.channels);
  return store;
}

// ---------------------------------------------------------------------------
// DiT

template <typename T>
Var<T> dense(ParamBinding<T>& P, Var<T> x, const std::string& name) {
  return linear(x, P(name + ".weight"), P(name + ".bias"));
}

/// x * (1 + scale) + shift with scale/shift broadcast from [B, 1, D].
template <typename T>
Var<T> modulate(Var<T> x, Var<T> shift, Var<T> scl) {
  return add(add(x, mul(x, scl)), shift);
}

template <typename T>
struct DiTOutput {
  Var<T> tokens;    // final block tokens [B, N, D]
  Var<T> semantic;  // RMS-normalized tokens as a grid [B, H/p, W/p, D]
  Var<T> cond;      // SiLU(timestep + class embedding) [B, D]
};

template <typename T>
void check_labels(const DiTConfig& c, std::span<const int> y, std::size_t batch) {
  if (y.size() != batch) throw shape_error("dit: " + std::to_string(y.size()) + " labels for batch " + std::to_string(batch));
  for (int label : y) {
    if (label < 0 || std::size_t(label) > c.num_classes) {
      throw std::out_of_range("dit: label " + std::to_string(label) + " outside [0, " + std::to_string(c.num_classes) + "]");
    }
  }
}

/// Runs the transformer trunk with `blocks` blocks over patch tokens x_bar [B, N, p*p*C].
template <typename T>
DiTOutput<T> dit_trunk(ParamBinding<T>& P, const DiTConfig& c, const basic_tensor<T>& x_bar, std::span<const T> t,
                       std::span<const int> y, std::size_t blocks) {
  Graph<T>& g = P.graph();
  if (x_bar.rank() != 3 || x_bar.dim(1) != c.tokens() || x_bar.dim(2) != c.patch_dim()) {
    throw shape_error("dit: patch tokens " + shape_str(x_bar.shape()) + " do not match config [B," + std::to_string(c.tokens()) +
                      "," + std::to_string(c.patch_dim()) + "]");
  }
  const std::size_t b = x_bar.dim(0), n = c.tokens(), d = c.hidden_dim, heads = c.heads, dh = c.head_dim();
  if (t.size() != b) throw shape_error("dit: " + std::to_string(t.size()) + " timesteps for batch " + std::to_string(b));
  check_labels<T>(c, y, b);

  Var<T> x = dense(P, g.constant(x_bar), "dit.patch_embed");
  x = add(x, g.constant(sincos_2d<T>(c.grid_h(), c.grid_w(), d)));

  Var<T> temb = g.constant(timestep_embedding<T>(t, c.time_freq_dim));
  temb = dense(P, silu(dense(P, temb, "dit.t_embed.fc1")), "dit.t_embed.fc2");
  Var<T> yemb = gather_rows(P("dit.y_embed.table"), std::vector<int>(y.begin(), y.end()));
  Var<T> cond = silu(add(temb, yemb));

  for (std::size_t i = 0; i < blocks; ++i) {
    const std::string pre = "dit.blocks." + std::to_string(i);
    Var<T> mod = reshape(dense(P, cond, pre + ".adaln"), {b, 1, 6 * d});
    auto chunk = [&](std::size_t k) { return slice(mod, 2, k * d, (k + 1) * d); };

    Var<T> h = modulate(rms_norm(x), chunk(0), chunk(1));
    Var<T> qkv = permute(reshape(dense(P, h, pre + ".attn.qkv"), {b, n, 3, heads, dh}), {2, 0, 3, 1, 4});
    auto head_part = [&](std::size_t k) { return reshape(slice(qkv, 0, k, k + 1), {b, heads, n, dh}); };
    Var<T> q = rope2d(head_part(0), c.grid_h(), c.grid_w());
    Var<T> k = rope2d(head_part(1), c.grid_h(), c.grid_w());
    Var<T> o = attention(q, k, head_part(2));
    o = reshape(permute(o, {0, 2, 1, 3}), {b, n, d});
    x = add(x, mul(chunk(2), dense(P, o, pre + ".attn.proj")));

    Var<T> h2 = modulate(rms_norm(x), chunk(3), chunk(4));
    Var<T> ff = mul(silu(dense(P, h2, pre + ".mlp.w1")), dense(P, h2, pre + ".mlp.w3"));
    x = add(x, mul(chunk(5), dense(P, ff, pre + ".mlp.w2")));
  }
  Var<T> sem = reshape(rms_norm(x), {b, c.grid_h(), c.grid_w(), d});
  return DiTOutput<T>{x, sem, cond};
}

/// Semantic field c [B, H/p, W/p, D] from noisy images x_t [B, H, W, C].
template <typename T>
DiTOutput<T> dit_forward(ParamBinding<T>& P, const ModelConfig& cfg, const basic_tensor<T>& x_t, std::span<const T> t,
                         std::span<const int> y) {
  return dit_trunk(P, cfg.dit, patchify(x_t, cfg.dit.patch_size), t, y, cfg.dit.depth);
}

// ---------------------------------------------------------------------------
// Pixel decoder

/// h0 = W_in(concat(x_t cells, pos)) with shape [B, H/s, W/s, d].
template <typename T>
Var<T> build_dense_queries(ParamBinding<T>& P, const ModelConfig& cfg, const basic_tensor<T>& x_t) {
  const auto& dc = cfg.decoder;
  const std::size_t s = dc.patch_size;
  if (x_t.rank() != 4 || x_t.dim(1) % s != 0 || x_t.dim(2) % s != 0 || x_t.dim(3) != cfg.dit.channels) {
    throw shape_error("build_dense_queries: x_t " + shape_str(x_t.shape()) + " incompatible with decoder patch " + std::to_string(s));
  }
  const std::size_t b = x_t.dim(0), hh = x_t.dim(1) / s, ww = x_t.dim(2) / s, cell = s * s * x_t.dim(3);
  const std::size_t width = cell + dc.pos_dim;
  auto cells = std::move(permute(x_t.reshape({b, hh, s, ww, s, x_t.dim(3)}), {0, 1, 3, 2, 4, 5})).reshape({b, hh, ww, cell});
  const auto pos = sincos_2d<T>(hh, ww, dc.pos_dim);
  basic_tensor<T> in({b, hh, ww, width});
  for (std::size_t bi = 0; bi < b; ++bi)
    for (std::size_t p = 0; p < hh * ww; ++p) {
      T* dst = in.data().data() + (bi * hh * ww + p) * width;
      const T* src = cells.data().data() + (bi * hh * ww + p) * cell;
      std::copy(src, src + cell, dst);
      std::copy(pos.data().begin() + p * dc.pos_dim, pos.data().begin() + (p + 1) * dc.pos_dim, dst + cell);
    }
  return dense(P, P.graph().constant(std::move(in)), "decoder.in_proj");
}

template <typename T>
struct DecoderCondition {
  Var<T> c_up;   // [B, H', W', d]
  Var<T> t_emb;  // [B, 1, 1, d]
};

/// Shared linear upsampling of c to the decoder grid plus the decoder timestep embedding.
template <typename T>
DecoderCondition<T> upsample_condition(ParamBinding<T>& P, const ModelConfig& cfg, Var<T> c, std::span<const T> t) {
  const auto& dc = cfg.decoder;
  const auto& cs = c.shape();
  const std::size_t s = dc.patch_size, p = cfg.dit.patch_size, r = p / s, dd = dc.hidden_dim;
  const std::size_t want_h = cfg.dit.image_height / s, want_w = cfg.dit.image_width / s;
  if (cs.size() != 4 || cs[3] != cfg.dit.hidden_dim || cs[1] * r != want_h || cs[2] * r != want_w || p % s != 0) {
    throw shape_error("upsample_condition: semantic grid " + shape_str(cs) + " does not map onto decoder grid " +
                      std::to_string(want_h) + "x" + std::to_string(want_w));
  }
  const std::size_t b = cs[0], gh = cs[1], gw = cs[2];
  if (t.size() != b) throw shape_error("upsample_condition: timestep count does not match batch");
  Var<T> u = dense(P, c, "decoder.cond_proj");
  u = permute(reshape(u, {b, gh, gw, r, r, dd}), {0, 1, 3, 2, 4, 5});
  u = reshape(u, {b, gh * r, gw * r, dd});
  Var<T> te = dense(P, P.graph().constant(timestep_embedding<T>(t, dc.time_freq_dim)), "decoder.t_embed");
  return DecoderCondition<T>{u, reshape(te, {b, 1, 1, dd})};
}

/// One decoder block given the shared activated condition SiLU(c_up + t_emb).
template <typename T>
Var<T> decoder_block_activated(ParamBinding<T>& P, std::size_t index, Var<T> h, Var<T> activated) {
  const std::string pre = "decoder.blocks." + std::to_string(index);
  const std::size_t dd = h.shape().back();
  Var<T> mod = dense(P, activated, pre + ".mod");
  Var<T> alpha = slice(mod, 3, 0, dd);
  Var<T> beta = slice(mod, 3, dd, 2 * dd);
  Var<T> gamma = slice(mod, 3, 2 * dd, 3 * dd);
  Var<T> inner = add(mul(gamma, h), beta);
  Var<T> m = dense(P, silu(dense(P, inner, pre + ".mlp.fc1")), pre + ".mlp.fc2");
  return add(h, mul(alpha, m));
}

/// h' = h + alpha * MLP(gamma * h + beta), (alpha, beta, gamma) = Linear(SiLU(c_up + t_emb)).
template <typename T>
Var<T> decoder_block(ParamBinding<T>& P, std::size_t index, Var<T> h, const DecoderCondition<T>& cond) {
  if (h.shape() != cond.c_up.shape()) {
    throw shape_error("decoder_block: h " + shape_str(h.shape()) + " vs c_up " + shape_str(cond.c_up.shape()));
  }
  return decoder_block_activated(P, index, h, silu(add(cond.c_up, cond.t_emb)));
}

/// Pixel velocity [B, H, W, C] from x_t and the semantic field.
template <typename T>
Var<T> predict_velocity(ParamBinding<T>& P, const ModelConfig& cfg, const basic_tensor<T>& x_t, std::span<const T> t, Var<T> c) {
  const auto& dc = cfg.decoder;
  Var<T> h = build_dense_queries(P, cfg, x_t);
  auto cond = upsample_condition(P, cfg, c, t);
  Var<T> act = silu(add(cond.c_up, cond.t_emb));
  for (std::size_t i = 0; i < dc.depth; ++i) h = decoder_block_activated(P, i, h, act);
  Var<T> out = dense(P, h, "decoder.out");
  const std::size_t s = dc.patch_size, b = x_t.dim(0), hh = x_t.dim(1) / s, ww = x_t.dim(2) / s, ch = x_t.dim(3);
  out = permute(reshape(out, {b, hh, ww, s, s, ch}), {0, 1, 3, 2, 4, 5});
  return reshape(out, {b, hh * s, ww * s, ch});
}

// ---------------------------------------------------------------------------
// Full models

template <typename T>
struct ForwardResult {
  Var<T> velocity;  // [B, H, W, C]
  Var<T> semantic;  // DiT output grid [B, H/p, W/p, D]
};

/// Single-DiT control: depth + 2 blocks and an AdaLN-modulated unpatchify head.
template <typename T>
ForwardResult<T> baseline_forward(ParamBinding<T>& P, const ModelConfig& cfg, const basic_tensor<T>& x_t, std::span<const T> t,
                                  std::span<const int> y) {
  const auto& c = cfg.dit;
  auto out = dit_trunk(P, c, patchify(x_t, c.patch_size), t, y, c.depth + 2);
  const std::size_t b = x_t.dim(0), d = c.hidden_dim;
  Var<T> mod = reshape(dense(P, out.cond, "head.adaln"), {b, 1, 2 * d});
  Var<T> h = modulate(rms_norm(out.tokens), slice(mod, 2, 0, d), slice(mod, 2, d, 2 * d));
  Var<T> v = unpatchify(dense(P, h, "head.linear"), c.patch_size, c.grid_h(), c.grid_w(), c.channels);
  return ForwardResult<T>{v, out.semantic};
}

template <typename T>
ForwardResult<T> deco_forward(ParamBinding<T>& P, const ModelConfig& cfg, const basic_tensor<T>& x_t, std::span<const T> t,
                              std::span<const int> y) {
  auto out = dit_forward(P, cfg, x_t, t, y);
  return ForwardResult<T>{predict_velocity(P, cfg, x_t, t, out.semantic), out.semantic};
}

template <typename T>
ForwardResult<T> forward(ParamBinding<T>& P, const ModelConfig& cfg, const basic_tensor<T>& x_t, std::span<const T> t,
                         std::span<const int> y) {
  return cfg.variant == Variant::deco ? deco_forward(P, cfg, x_t, t, y) : baseline_forward(P, cfg, x_t, t, y);
}

/// Inference-only evaluation: parameters enter the graph as constants, so nothing is taped for backward.
template <typename T>
basic_tensor<T> evaluate_velocity(const ParameterStore<T>& weights, const ModelConfig& cfg, const basic_tensor<T>& x_t,
                                  std::span<const T> t, std::span<const int> y, basic_tensor<T>* semantic = nullptr) {
  Graph<T> g;
  ParamBinding<T> P(g, weights, /*trainable=*/false);
  auto r = forward(P, cfg, x_t, t, y);
  if (semantic) *semantic = r.semantic.value();
  return r.velocity.value();
}

}  // namespace deco::model
