#include <malloc.h>

#include <CLI11.hpp>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "deco/app/artifacts.hpp"
#include "deco/app/checkpoint.hpp"
#include "deco/app/config.hpp"
#include "deco/app/dataset.hpp"
#include "deco/app/image_io.hpp"
#include "deco/app/trainer.hpp"
#include "deco/spectral.hpp"

namespace fs = std::filesystem;
using namespace deco;
using namespace deco::app;

namespace {

struct Overrides {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> steps;
  std::optional<std::string> variant;
  std::optional<int> quality;
  std::optional<double> cfg_scale;
  std::optional<std::string> solver;
  std::optional<std::string> out;
  bool dump_features = false;
};

enum class Cmd { train, sample, gen_data };

RunConfig resolve(const Overrides& o, Cmd cmd) {
  std::vector<std::string> problems;
  RunConfig c = o.config.empty() ? RunConfig{} : read_config_file(o.config, problems);
  if (o.out) c.output_dir = *o.out;
  if (o.variant) c.model.variant = *o.variant;
  if (o.quality) c.training.freqfm_quality = *o.quality;
  if (o.cfg_scale) c.sampling.cfg_scale = *o.cfg_scale;
  if (o.solver) c.sampling.solver = *o.solver;
  if (o.steps) (cmd == Cmd::sample ? c.sampling.steps : c.training.steps) = *o.steps;
  if (o.seed) (cmd == Cmd::sample ? c.sampling.seed : cmd == Cmd::gen_data ? c.data.seed : c.training.seed) = *o.seed;
  for (auto& v : c.violations()) problems.push_back(std::move(v));
  if (!problems.empty()) throw config_error(std::move(problems));
  return c;
}

void add_config_flags(CLI::App* sub, Overrides& o) {
  sub->add_option("--config", o.config, "JSON run configuration")->check(CLI::ExistingFile);
  sub->add_option("--out", o.out, "output directory (overrides output_dir)");
  sub->add_option("--seed", o.seed, "seed override");
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ---------------------------------------------------------------------------

template <typename T>
int run_train(const RunConfig& cfg) {
  const auto t0 = std::chrono::steady_clock::now();
  const fs::path dir = cfg.output_dir;
  fs::create_directories(dir);
  const auto mc = cfg.model_config();
  const auto data = load_dataset(cfg);
  const auto weights = freq::frequency_weights(cfg.training.freqfm_quality);
  const fs::path ckpt_path = dir / "checkpoint.bin";
  save_config(dir / "config.json", cfg);

  auto state = init_train_state<T>(cfg);
  if (fs::exists(ckpt_path)) {
    restore_train_state(state, load_checkpoint(ckpt_path));
    std::cerr << "resuming from step " << state.step << "\n";
  }
  std::cerr << "training " << model::to_string(mc.variant) << " (" << state.params.parameter_count() << " parameters, "
            << data.size() << " images) to step " << cfg.training.steps << "\n";

  MetricsLog metrics(dir / "metrics.jsonl");
  const std::size_t log_every = std::max<std::size_t>(1, cfg.training.steps / 20);
  while (state.step < cfg.training.steps) {
    const auto r = train_step(cfg, mc, state, data, weights);
    metrics.write({{"step", state.step}, {"fm", r.fm}, {"freqfm", r.freqfm}, {"repa", r.repa}, {"total", r.total},
                   {"grad_norm", r.grad_norm}, {"wall_time", seconds_since(t0)}});
    if (state.step % cfg.training.checkpoint_every == 0 || state.step == cfg.training.steps) save_checkpoint(ckpt_path, to_checkpoint(state));
    if (state.step % log_every == 0)
      std::fprintf(stderr, "step %6llu  fm %.5f  freqfm %.5f  total %.5f  (%.1fs)\n", (unsigned long long)state.step, r.fm, r.freqfm,
                   r.total, seconds_since(t0));
  }
  if (!fs::exists(ckpt_path)) save_checkpoint(ckpt_path, to_checkpoint(state));

  Manifest m{"train", cfg, cfg.training.seed, {dir / "config.json", ckpt_path, metrics.path()}, {{"final_step", state.step}}};
  m.write(dir);
  return 0;
}

template <typename T>
int run_sample(const RunConfig& cfg, const std::string& checkpoint, bool dump_features) {
  const fs::path dir = cfg.output_dir;
  fs::create_directories(dir);
  const auto mc = cfg.model_config();
  const fs::path ckpt_path = checkpoint.empty() ? dir / "checkpoint.bin" : fs::path(checkpoint);
  const auto ck = load_checkpoint(ckpt_path);
  const auto weights = checkpoint_weights<T>(ck, mc, cfg.sampling.weights);
  const auto labels = cycling_labels(cfg.sampling.num_samples, mc.dit.num_classes);
  const auto sc = cfg.sampling.sampler();
  const int null_label = int(mc.dit.num_classes);

  std::vector<basic_tensor<T>> sem_steps, vel_steps;
  std::vector<double> times;
  EvalObserver<T> observer;
  if (dump_features) {
    observer = [&](double t, std::span<const int> y, const basic_tensor<T>& sem, const basic_tensor<T>& vel) {
      if (!y.empty() && y.front() == null_label) return;
      sem_steps.push_back(sem);
      vel_steps.push_back(vel);
      times.push_back(t);
    };
  }
  const auto result = generate(weights, mc, labels, sc, observer);
  std::cout << "model evaluations: " << result.evaluations << "\n";

  std::vector<fs::path> artifacts;
  const fs::path grid = dir / "samples.png";
  write_png(grid, image_grid(result.images, mc.dit.num_classes));
  artifacts.push_back(grid);

  if (dump_features) {
    // Trajectory-major [B*T, ...] layout: entries b*T .. b*T+T-1 follow sample b through time.
    auto stack = [](const std::vector<basic_tensor<T>>& steps) {
      const Shape s = steps.front().shape();
      const std::size_t b = s[0], tn = steps.size(), per = numel(s) / b;
      Shape out_shape = s;
      out_shape[0] = b * tn;
      TensorF out(out_shape);
      for (std::size_t t = 0; t < tn; ++t)
        for (std::size_t i = 0; i < b; ++i)
          for (std::size_t j = 0; j < per; ++j) out[(i * tn + t) * per + j] = float(steps[t][i * per + j]);
      return out;
    };
    Checkpoint dump;
    dump.step = times.size();
    dump.arrays.push_back(NamedArray::from("features", stack(sem_steps)));
    dump.arrays.push_back(NamedArray::from("velocity", stack(vel_steps)));
    dump.arrays.push_back(NamedArray::from("times", Tensor({times.size()}, times)));
    std::vector<double> lab(labels.begin(), labels.end());
    dump.arrays.push_back(NamedArray::from("labels", Tensor({lab.size()}, lab)));
    const fs::path p = dir / "features.bin";
    save_checkpoint(p, dump);
    artifacts.push_back(p);
    std::cout << "captured " << times.size() << " conditional evaluations per trajectory\n";
  }

  Manifest m{"sample", cfg, sc.seed, artifacts,
             {{"checkpoint", fs::absolute(ckpt_path).string()}, {"checkpoint_sha256", sha256_file(ckpt_path)},
              {"model_evaluations", result.evaluations}}};
  m.write(dir);
  return 0;
}

int run_gen_data(const RunConfig& cfg) {
  const fs::path dir = cfg.output_dir;
  const auto ds = generate_synthetic_dataset(cfg.data.synthetic_spec());
  auto files = write_image_directory(ds, dir);
  std::cout << "wrote " << files.size() << " images to " << dir << "\n";
  Manifest m{"gen-data", cfg, cfg.data.seed, files, {{"count", files.size()}}};
  m.write(dir);
  return 0;
}

// ---------------------------------------------------------------------------

int run_analyze(const std::vector<std::pair<std::string, std::string>>& inputs, const std::string& out_dir, std::size_t block,
                std::size_t cutoff) {
  const fs::path dir = out_dir;
  fs::create_directories(dir);
  json summary = json::object();
  std::vector<fs::path> artifacts;
  for (const auto& [variant, path] : inputs) {
    const auto dump = load_checkpoint(path);
    for (const char* name : {"features", "velocity"}) {
      const auto* arr = dump.find(name);
      if (!arr) continue;
      spectral::SpectrumAccumulator acc(block);
      try {
        acc.add(arr->to<double>());
      } catch (const shape_error& e) {
        std::cerr << "skipping " << variant << " " << name << ": " << e.what() << "\n";
        continue;
      }
      const auto spec = acc.finish();
      const double hf = spectral::highfreq_fraction(spec.raw, cutoff);
      const fs::path p = dir / ("spectrum_" + variant + "_" + name + ".json");
      std::ofstream(p) << json{{"variant", variant},       {"array", name},           {"source", path},
                               {"block_size", block},      {"blocks", spec.blocks},   {"highfreq_cutoff", cutoff},
                               {"highfreq_fraction", hf},  {"normalized", spec.normalized}, {"raw", spec.raw}}
                              .dump(2)
                       << '\n';
      artifacts.push_back(p);
      summary[variant][name] = hf;
      std::printf("%-9s %-9s highfreq_fraction %.6f\n", variant.c_str(), name, hf);
    }
  }
  if (summary.empty()) throw std::invalid_argument("no analyzable arrays in the given dumps");
  const fs::path sp = dir / "spectrum_summary.json";
  std::ofstream(sp) << summary.dump(2) << '\n';
  artifacts.push_back(sp);
  RunConfig cfg;
  cfg.output_dir = out_dir;
  json inputs_doc = json::object();
  for (const auto& [variant, path] : inputs) inputs_doc[variant] = {{"path", path}, {"sha256", sha256_file(path)}};
  Manifest m{"analyze-spectrum", cfg, 0, artifacts, {{"inputs", inputs_doc}, {"block_size", block}, {"cutoff", cutoff}}};
  m.write(dir);
  return 0;
}

int run_cluster(const std::string& dump_path, const std::string& out_dir, std::size_t k, std::size_t frames, std::size_t trajectory,
                std::uint64_t seed, std::size_t scale) {
  const fs::path dir = out_dir;
  fs::create_directories(dir);
  const auto dump = load_checkpoint(dump_path);
  const auto feats = dump.at("features").to<double>();
  const std::size_t tn = dump.step;
  if (tn == 0 || feats.dim(0) % tn != 0) throw std::invalid_argument("feature dump has inconsistent trajectory length");
  const std::size_t trajectories = feats.dim(0) / tn;
  if (trajectory >= trajectories) {
    throw std::invalid_argument("trajectory " + std::to_string(trajectory) + " out of range (dump holds " + std::to_string(trajectories) + ")");
  }
  const std::size_t per = numel(feats.shape()) / feats.dim(0);
  Tensor seq({tn, feats.dim(1), feats.dim(2), feats.dim(3)});
  std::copy_n(feats.data().begin() + trajectory * tn * per, tn * per, seq.data().begin());
  const auto maps = spectral::feature_cluster_map(seq, k, frames, seed);

  std::vector<fs::path> artifacts;
  json frames_doc = json::array();
  for (const auto& f : maps) {
    Image8 img(f.width, f.height);
    img.pixels = f.image;
    char name[48];
    std::snprintf(name, sizeof name, "clusters_step%03zu.png", f.timestep);
    write_png(dir / name, upscale(img, scale));
    artifacts.push_back(dir / name);
    frames_doc.push_back({{"step", f.timestep}, {"file", name}, {"labels", f.labels}});
  }
  const fs::path lp = dir / "clusters.json";
  std::ofstream(lp) << json{{"k", k}, {"trajectory", trajectory}, {"frames", frames_doc}}.dump() << '\n';
  artifacts.push_back(lp);
  RunConfig cfg;
  cfg.output_dir = out_dir;
  Manifest m{"cluster-features", cfg, seed, artifacts, {{"input", dump_path}, {"input_sha256", sha256_file(dump_path)}}};
  m.write(dir);
  std::cout << "wrote " << maps.size() << " cluster maps to " << dir << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);

  CLI::App app{"deco: frequency-decoupled pixel diffusion"};
  app.require_subcommand(1);

  Overrides train_o, sample_o, gen_o;
  auto* train = app.add_subcommand("train", "train a model; resumes from <out>/checkpoint.bin when present");
  add_config_flags(train, train_o);
  train->add_option("--steps", train_o.steps, "target total training steps");
  train->add_option("--variant", train_o.variant, "deco|baseline")->check(CLI::IsMember({"deco", "baseline"}));
  train->add_option("--quality", train_o.quality, "FreqFM JPEG quality in [50, 100]");

  std::string checkpoint;
  auto* sample = app.add_subcommand("sample", "generate an image grid from a checkpoint");
  add_config_flags(sample, sample_o);
  sample->add_option("--steps", sample_o.steps, "sampling steps");
  sample->add_option("--variant", sample_o.variant, "deco|baseline")->check(CLI::IsMember({"deco", "baseline"}));
  sample->add_option("--cfg-scale", sample_o.cfg_scale, "classifier-free guidance scale");
  sample->add_option("--solver", sample_o.solver, "euler|heun")->check(CLI::IsMember({"euler", "heun"}));
  sample->add_flag("--dump-features", sample_o.dump_features, "store DiT outputs and velocities of every step");
  sample->add_option("--checkpoint", checkpoint, "checkpoint path (default <out>/checkpoint.bin)");

  std::string deco_dump, baseline_dump, analyze_out = "spectrum";
  std::vector<std::string> extra_dumps;
  std::size_t block = 8, cutoff = 32;
  auto* analyze = app.add_subcommand("analyze-spectrum", "DCT energy spectra of captured DiT outputs and velocities");
  analyze->add_option("--deco", deco_dump, "feature dump of the deco variant")->check(CLI::ExistingFile);
  analyze->add_option("--baseline", baseline_dump, "feature dump of the baseline variant")->check(CLI::ExistingFile);
  analyze->add_option("--input", extra_dumps, "additional LABEL=PATH dumps");
  analyze->add_option("--out", analyze_out, "output directory");
  analyze->add_option("--block", block, "DCT block size");
  analyze->add_option("--cutoff", cutoff, "zigzag index where high frequencies begin");

  std::string dump_path, cluster_out = "clusters";
  std::size_t k = 8, frames = 4, trajectory = 0, scale = 8;
  std::uint64_t cluster_seed = 0;
  auto* cluster = app.add_subcommand("cluster-features", "k-means maps of captured DiT outputs");
  cluster->add_option("--dump", dump_path, "feature dump written by sample --dump-features")->required()->check(CLI::ExistingFile);
  cluster->add_option("--out", cluster_out, "output directory");
  cluster->add_option("--k", k, "number of clusters");
  cluster->add_option("--frames", frames, "number of uniformly spaced steps");
  cluster->add_option("--trajectory", trajectory, "which sample's trajectory to visualize");
  cluster->add_option("--seed", cluster_seed, "k-means seed");
  cluster->add_option("--scale", scale, "nearest-neighbour upscale factor of the written maps")->check(CLI::PositiveNumber);

  auto* gen = app.add_subcommand("gen-data", "write the synthetic dataset as class_k/NNNNN.png");
  add_config_flags(gen, gen_o);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train) {
      const auto cfg = resolve(train_o, Cmd::train);
      return cfg.training.precision == "float32" ? run_train<float>(cfg) : run_train<double>(cfg);
    }
    if (*sample) {
      const auto cfg = resolve(sample_o, Cmd::sample);
      return cfg.training.precision == "float32" ? run_sample<float>(cfg, checkpoint, sample_o.dump_features)
                                                 : run_sample<double>(cfg, checkpoint, sample_o.dump_features);
    }
    if (*gen) return run_gen_data(resolve(gen_o, Cmd::gen_data));
    if (*analyze) {
      std::vector<std::pair<std::string, std::string>> inputs;
      if (!deco_dump.empty()) inputs.emplace_back("deco", deco_dump);
      if (!baseline_dump.empty()) inputs.emplace_back("baseline", baseline_dump);
      for (const auto& e : extra_dumps) {
        const auto eq = e.find('=');
        if (eq == std::string::npos || eq == 0) throw std::invalid_argument("--input expects LABEL=PATH, got '" + e + "'");
        inputs.emplace_back(e.substr(0, eq), e.substr(eq + 1));
      }
      if (inputs.empty()) throw std::invalid_argument("analyze-spectrum needs --deco, --baseline or --input");
      return run_analyze(inputs, analyze_out, block, cutoff);
    }
    if (*cluster) return run_cluster(dump_path, cluster_out, k, frames, trajectory, cluster_seed, scale);
  } catch (const config_error& e) {
    std::cerr << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
