#pragma once

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "deco/app/dataset.hpp"
#include "deco/freq.hpp"
#include "deco/model.hpp"
#include "deco/sampler.hpp"

namespace deco::app {

using json = nlohmann::ordered_json;

struct TrainingConfig {
  std::size_t batch_size = 64;
  std::size_t steps = 1000;
  double lr = 1e-4;
  std::uint64_t seed = 0;
  double class_dropout = 0.1;
  int freqfm_quality = 85;
  double freqfm_weight = 1.0;
  double ema_decay = 0.9999;
  double max_grad_norm = 0.0;
  std::size_t checkpoint_every = 500;
  std::string precision = "float64";  // float64 | float32
};

struct SamplingConfig {
  std::size_t steps = 100;
  std::string solver = "euler";
  double cfg_scale = 1.0;
  double guidance_interval[2] = {0.1, 1.0};
  std::uint64_t seed = 0;
  std::size_t num_samples = 16;
  std::string weights = "ema";  // ema | raw
  bool heun_final_euler = false;

  sampling::SamplerConfig sampler() const {
    sampling::SamplerConfig s;
    s.steps = steps;
    s.solver = sampling::solver_from_string(solver);
    s.cfg_scale = cfg_scale;
    s.interval_lo = guidance_interval[0];
    s.interval_hi = guidance_interval[1];
    s.seed = seed;
    s.heun_final_euler = heun_final_euler;
    return s;
  }
};

struct DataConfig {
  std::string source = "synthetic";  // synthetic | directory
  std::string path;
  std::size_t image_size = 32;
  std::size_t num_classes = 8;
  std::size_t count = 4096;
  double noise = 0.1;
  std::uint64_t seed = 0;

  SyntheticDatasetSpec synthetic_spec() const { return {num_classes, image_size, count, noise, seed}; }
};

struct ModelSection {
  std::string variant = "deco";
  model::DiTConfig dit;
  model::DecoderConfig decoder;
};

struct RunConfig {
  ModelSection model;
  TrainingConfig training;
  SamplingConfig sampling;
  DataConfig data;
  std::string output_dir = "runs/default";

  /// Model configuration with image extents and class count taken from the data section.
  model::ModelConfig model_config() const {
    model::ModelConfig m;
    m.dit = model.dit;
    m.decoder = model.decoder;
    m.dit.image_height = m.dit.image_width = data.image_size;
    m.dit.num_classes = data.num_classes;
    m.dit.channels = 3;
    m.variant = model::variant_from_string(model.variant);
    return m;
  }

  std::vector<std::string> violations() const {
    std::vector<std::string> v;
    const std::size_t s = data.image_size;
    if (s == 0 || s % 8 != 0) v.push_back("data.image_size must be a positive multiple of 8");
    if (model.dit.patch_size == 0 || s % model.dit.patch_size != 0) v.push_back("data.image_size must be divisible by model.dit.patch_size");
    if (model.decoder.patch_size == 0 || s % model.decoder.patch_size != 0)
      v.push_back("data.image_size must be divisible by model.decoder.patch_size");
    if (model.variant != "deco" && model.variant != "baseline") v.push_back("model.variant must be deco or baseline, got '" + model.variant + "'");
    else
      for (auto& m : model_config().violations())
        if (m.rfind("image extents", 0) != 0) v.push_back("model." + m);
    if (training.batch_size < 1) v.push_back("training.batch_size must be >= 1");
    if (!(training.lr > 0)) v.push_back("training.lr must be > 0");
    if (!(training.class_dropout >= 0 && training.class_dropout <= 1)) v.push_back("training.class_dropout must lie in [0, 1]");
    if (training.freqfm_quality < 50 || training.freqfm_quality > 100) v.push_back("training.freqfm_quality must lie in [50, 100]");
    if (!(training.freqfm_weight >= 0)) v.push_back("training.freqfm_weight must be >= 0");
    if (!(training.ema_decay >= 0 && training.ema_decay < 1)) v.push_back("training.ema_decay must lie in [0, 1)");
    if (!(training.max_grad_norm >= 0)) v.push_back("training.max_grad_norm must be >= 0");
    if (training.checkpoint_every < 1) v.push_back("training.checkpoint_every must be >= 1");
    if (training.precision != "float64" && training.precision != "float32")
      v.push_back("training.precision must be float64 or float32, got '" + training.precision + "'");
    if (sampling.solver != "euler" && sampling.solver != "heun") v.push_back("sampling.solver must be euler or heun, got '" + sampling.solver + "'");
    else
      for (auto& m : sampling.sampler().violations()) v.push_back(m);
    if (sampling.num_samples < 1) v.push_back("sampling.num_samples must be >= 1");
    if (sampling.weights != "ema" && sampling.weights != "raw") v.push_back("sampling.weights must be ema or raw, got '" + sampling.weights + "'");
    if (data.source == "synthetic") {
      for (auto& m : data.synthetic_spec().violations()) v.push_back(m);
    } else if (data.source == "directory") {
      if (data.path.empty()) v.push_back("data.path is required when data.source is directory");
      else if (!std::filesystem::is_directory(data.path)) v.push_back("data.path '" + data.path + "' does not exist");
    } else {
      v.push_back("data.source must be synthetic or directory, got '" + data.source + "'");
    }
    if (data.num_classes < 1) v.push_back("data.num_classes must be >= 1");
    if (output_dir.empty()) v.push_back("output_dir must not be empty");
    return v;
  }
};

class config_error : public std::invalid_argument {
 public:
  explicit config_error(std::vector<std::string> problems)
      : std::invalid_argument(format(problems)), problems_(std::move(problems)) {}
  const std::vector<std::string>& problems() const { return problems_; }

 private:
  static std::string format(const std::vector<std::string>& p) {
    std::string s = "invalid configuration (" + std::to_string(p.size()) + " problem" + (p.size() == 1 ? "" : "s") + "):";
    for (const auto& m : p) s += "\n  - " + m;
    return s;
  }
  std::vector<std::string> problems_;
};

inline void validate(const RunConfig& cfg) {
  if (auto v = cfg.violations(); !v.empty()) throw config_error(std::move(v));
}

// ---------------------------------------------------------------------------
// JSON mapping

inline json to_json(const RunConfig& c) {
  const auto& d = c.model.dit;
  const auto& e = c.model.decoder;
  const auto& t = c.training;
  const auto& s = c.sampling;
  return json{
      {"model",
       {{"variant", c.model.variant},
        {"dit",
         {{"depth", d.depth}, {"hidden_dim", d.hidden_dim}, {"heads", d.heads}, {"patch_size", d.patch_size},
          {"mlp_hidden", d.mlp_hidden}, {"time_freq_dim", d.time_freq_dim}}},
        {"decoder",
         {{"hidden_dim", e.hidden_dim}, {"depth", e.depth}, {"patch_size", e.patch_size}, {"pos_dim", e.pos_dim},
          {"mlp_ratio", e.mlp_ratio}, {"time_freq_dim", e.time_freq_dim}}}}},
      {"training",
       {{"batch_size", t.batch_size}, {"steps", t.steps}, {"lr", t.lr}, {"seed", t.seed}, {"class_dropout", t.class_dropout},
        {"freqfm_quality", t.freqfm_quality}, {"freqfm_weight", t.freqfm_weight}, {"ema_decay", t.ema_decay},
        {"max_grad_norm", t.max_grad_norm}, {"checkpoint_every", t.checkpoint_every}, {"precision", t.precision}}},
      {"sampling",
       {{"steps", s.steps}, {"solver", s.solver}, {"cfg_scale", s.cfg_scale},
        {"guidance_interval", {s.guidance_interval[0], s.guidance_interval[1]}}, {"seed", s.seed}, {"num_samples", s.num_samples},
        {"weights", s.weights}, {"heun_final_euler", s.heun_final_euler}}},
      {"data",
       {{"source", c.data.source}, {"path", c.data.path}, {"image_size", c.data.image_size}, {"num_classes", c.data.num_classes},
        {"count", c.data.count}, {"noise", c.data.noise}, {"seed", c.data.seed}}},
      {"output_dir", c.output_dir},
  };
}

namespace detail {

/// Reads known keys of one object, recording type errors and unknown keys instead of stopping.
class ObjectReader {
 public:
  ObjectReader(const json& obj, std::string prefix, std::vector<std::string>& problems)
      : obj_(obj), prefix_(std::move(prefix)), problems_(problems) {
    if (!obj_.is_object()) problems_.push_back(where("") + " must be an object");
  }
  ~ObjectReader() {
    if (!obj_.is_object()) return;
    for (const auto& [k, _] : obj_.items())
      if (!seen_.count(k)) problems_.push_back("unknown field " + where(k));
  }

  template <typename U>
  void field(const std::string& key, U& out) {
    seen_.insert(key);
    if (!obj_.is_object() || !obj_.contains(key)) return;
    const json& v = obj_.at(key);
    if constexpr (std::is_same_v<U, bool>) {
      if (!v.is_boolean()) return bad(key, "a boolean");
      out = v.get<bool>();
    } else if constexpr (std::is_same_v<U, std::string>) {
      if (!v.is_string()) return bad(key, "a string");
      out = v.get<std::string>();
    } else if constexpr (std::is_floating_point_v<U>) {
      if (!v.is_number()) return bad(key, "a number");
      out = v.get<U>();
    } else {
      if (!v.is_number_integer()) return bad(key, "an integer");
      if constexpr (std::is_unsigned_v<U>) {
        if (v.is_number_integer() && !v.is_number_unsigned() && v.get<std::int64_t>() < 0) return bad(key, "a non-negative integer");
      }
      out = v.get<U>();
    }
  }

  void pair(const std::string& key, double (&out)[2]) {
    seen_.insert(key);
    if (!obj_.is_object() || !obj_.contains(key)) return;
    const json& v = obj_.at(key);
    if (!v.is_array() || v.size() != 2 || !v[0].is_number() || !v[1].is_number()) return bad(key, "a [lo, hi] pair of numbers");
    out[0] = v[0].get<double>();
    out[1] = v[1].get<double>();
  }

  const json* child(const std::string& key) {
    seen_.insert(key);
    if (!obj_.is_object() || !obj_.contains(key)) return nullptr;
    return &obj_.at(key);
  }

  std::string where(const std::string& key) const { return prefix_.empty() ? key : (key.empty() ? prefix_ : prefix_ + "." + key); }

 private:
  void bad(const std::string& key, const char* expected) { problems_.push_back(where(key) + " must be " + expected); }

  const json& obj_;
  std::string prefix_;
  std::vector<std::string>& problems_;
  std::set<std::string> seen_;
};

}  // namespace detail

/// Overlays the document onto `base`; missing fields keep their defaults. Collects every schema problem.
inline RunConfig from_json(const json& doc, RunConfig base, std::vector<std::string>& problems) {
  detail::ObjectReader root(doc, "", problems);
  RunConfig& c = base;
  if (const json* m = root.child("model")) {
    detail::ObjectReader r(*m, "model", problems);
    r.field("variant", c.model.variant);
    if (const json* d = r.child("dit")) {
      detail::ObjectReader q(*d, "model.dit", problems);
      q.field("depth", c.model.dit.depth);
      q.field("hidden_dim", c.model.dit.hidden_dim);
      q.field("heads", c.model.dit.heads);
      q.field("patch_size", c.model.dit.patch_size);
      q.field("mlp_hidden", c.model.dit.mlp_hidden);
      q.field("time_freq_dim", c.model.dit.time_freq_dim);
    }
    if (const json* d = r.child("decoder")) {
      detail::ObjectReader q(*d, "model.decoder", problems);
      q.field("hidden_dim", c.model.decoder.hidden_dim);
      q.field("depth", c.model.decoder.depth);
      q.field("patch_size", c.model.decoder.patch_size);
      q.field("pos_dim", c.model.decoder.pos_dim);
      q.field("mlp_ratio", c.model.decoder.mlp_ratio);
      q.field("time_freq_dim", c.model.decoder.time_freq_dim);
    }
  }
  if (const json* t = root.child("training")) {
    detail::ObjectReader r(*t, "training", problems);
    r.field("batch_size", c.training.batch_size);
    r.field("steps", c.training.steps);
    r.field("lr", c.training.lr);
    r.field("seed", c.training.seed);
    r.field("class_dropout", c.training.class_dropout);
    r.field("freqfm_quality", c.training.freqfm_quality);
    r.field("freqfm_weight", c.training.freqfm_weight);
    r.field("ema_decay", c.training.ema_decay);
    r.field("max_grad_norm", c.training.max_grad_norm);
    r.field("checkpoint_every", c.training.checkpoint_every);
    r.field("precision", c.training.precision);
  }
  if (const json* s = root.child("sampling")) {
    detail::ObjectReader r(*s, "sampling", problems);
    r.field("steps", c.sampling.steps);
    r.field("solver", c.sampling.solver);
    r.field("cfg_scale", c.sampling.cfg_scale);
    r.pair("guidance_interval", c.sampling.guidance_interval);
    r.field("seed", c.sampling.seed);
    r.field("num_samples", c.sampling.num_samples);
    r.field("weights", c.sampling.weights);
    r.field("heun_final_euler", c.sampling.heun_final_euler);
  }
  if (const json* d = root.child("data")) {
    detail::ObjectReader r(*d, "data", problems);
    r.field("source", c.data.source);
    r.field("path", c.data.path);
    r.field("image_size", c.data.image_size);
    r.field("num_classes", c.data.num_classes);
    r.field("count", c.data.count);
    r.field("noise", c.data.noise);
    r.field("seed", c.data.seed);
  }
  root.field("output_dir", c.output_dir);
  return c;
}

/// Reads a config file, appending schema problems (unknown fields, wrong types) to `problems`.
inline RunConfig read_config_file(const std::filesystem::path& path, std::vector<std::string>& problems) {
  std::ifstream in(path);
  if (!in) throw config_error({"cannot open config file '" + path.string() + "'"});
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw config_error({"config file '" + path.string() + "' is not valid JSON: " + e.what()});
  }
  return from_json(doc, RunConfig{}, problems);
}

/// Parses and validates a config file; schema problems and constraint violations are reported together.
inline RunConfig load_config(const std::filesystem::path& path) {
  std::vector<std::string> problems;
  RunConfig c = read_config_file(path, problems);
  for (auto& v : c.violations()) problems.push_back(std::move(v));
  if (!problems.empty()) throw config_error(std::move(problems));
  return c;
}

inline void save_config(const std::filesystem::path& path, const RunConfig& c) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write config '" + path.string() + "'");
  out << to_json(c).dump(2) << '\n';
}

}  // namespace deco::app
