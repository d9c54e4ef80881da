// Copyright 2026 The APEX Prompting Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Command-line front end: benchmark generation, training, evaluation,
// ablations, the slot sweep and memory visualization. Every output directory
// receives a manifest echoing the configuration that produced it.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "apex/errors.hpp"
#include "apex/harness.hpp"
#include "apex/image_io.hpp"

namespace fs = std::filesystem;
using namespace apex;

namespace {

TrainConfig load_config(const std::string& path) {
  return path.empty() ? TrainConfig{} : TrainConfig::from_kv(KeyValues::load(path));
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw FormatError("cannot write " + path.string());
}

void write_manifest(const fs::path& dir, const std::string& command, const TrainConfig& tc,
                    const KeyValues& extra = {}) {
  KeyValues kv;
  kv.set("command", command);
  kv.merge(tc.to_kv());
  kv.merge(extra);
  write_text(dir / "manifest.txt", kv.to_text());
}

KeyValues backbone_kv(const FrozenBackbone& bb) {
  KeyValues kv;
  kv.set("backbone_threshold", bb.threshold);
  kv.set("backbone_slope", bb.slope);
  kv.set("backbone_radius", static_cast<long long>(bb.radius));
  return kv;
}

FrozenBackbone backbone_from(const KeyValues& kv) {
  FrozenBackbone bb;
  bb.threshold = kv.get_double("backbone_threshold");
  bb.slope = kv.get_double("backbone_slope");
  bb.radius = static_cast<int>(kv.get_int("backbone_radius"));
  return bb;
}

std::vector<DomainSample> concat(const std::vector<DomainSample>& a,
                                 const std::vector<DomainSample>& b) {
  std::vector<DomainSample> out = a;
  out.insert(out.end(), b.begin(), b.end());
  return out;
}

void emit(const std::string& out, const std::string& text) {
  if (out.empty()) {
    std::cout << text;
  } else {
    write_text(out, text);
  }
}

int gen_bench(const std::string& config, std::optional<std::uint64_t> seed,
              const std::string& out) {
  TrainConfig tc = load_config(config);
  if (seed) tc.bench_seed = *seed;
  const Benchmark b = build_benchmark(benchmark_config(tc), tc.bench_seed);
  save_benchmark(b, out);
  write_manifest(out, "gen-bench", tc);
  fs::create_directories(fs::path(out) / "preview");
  for (const std::string name : {"source_test", "test_seen", "test_unseen"}) {
    const auto& split = b.split(name);
    for (std::size_t i = 0; i < std::min<std::size_t>(2, split.size()); ++i)
      write_pnm((fs::path(out) / "preview" / (name + "_" + std::to_string(i) + ".pgm")).string(),
                split[i].image);
  }
  std::printf("benchmark with %zu seen-train, %zu seen-test, %zu unseen-test samples -> %s\n",
              b.train_seen.size(), b.test_seen.size(), b.test_unseen.size(), out.c_str());
  return 0;
}

int train_cmd(const std::string& config, const std::string& bench_dir,
              std::optional<std::uint64_t> seed, const std::string& out) {
  TrainConfig tc = load_config(config);
  if (seed) tc.seeds = {*seed};
  const Benchmark b = load_benchmark(bench_dir);
  const FrozenBackbone bb = backbone_calibrate(b.source_train);
  const fs::path dir(out);
  write_manifest(dir, "train", tc, backbone_kv(bb));
  emit((dir / "source_only.csv").string(),
       metric_csv(evaluate_benchmark(nullptr, bb, b), "source_only"));
  for (std::uint64_t s : tc.seeds) {
    const std::string stem = "seed" + std::to_string(s);
    const TrainResult r = train(tc, b, bb, s);
    std::string log = loss_csv_header() + "\n";
    for (std::size_t i = 0; i < r.log.size(); ++i)
      log += loss_csv_row(static_cast<long>(i), r.log[i]) + "\n";
    write_text(dir / (stem + "_loss.csv"), log);
    KeyValues extra = tc.to_kv();
    extra.merge(backbone_kv(bb));
    extra.set("train_seed", std::to_string(s));
    save_checkpoint(dir / (stem + ".apxt"), r.state, extra);
    const MetricReport m = evaluate_benchmark(&r.state, bb, b);
    write_text(dir / (stem + "_metrics.csv"), metric_csv(m, "apex"));
    std::printf("seed %llu: seen %.2f unseen %.2f total %.2f Dice\n",
                static_cast<unsigned long long>(s), m.mean_dice(true), m.mean_dice(false),
                m.total_dice());
  }
  return 0;
}

int eval_cmd(const std::string& ckpt, const std::string& bench_dir, const std::string& split,
             bool source_only, const std::string& out) {
  const Benchmark b = load_benchmark(bench_dir);
  std::optional<LoadedCheckpoint> loaded;
  if (!ckpt.empty()) loaded = load_checkpoint(ckpt);
  if (!loaded && !source_only) throw FormatError("eval: --ckpt is required without --source-only");
  const FrozenBackbone bb =
      loaded ? backbone_from(loaded->manifest) : backbone_calibrate(b.source_train);
  const ApexState* state = source_only ? nullptr : &loaded->state;

  std::vector<int> seen;
  for (const auto& s : b.test_seen) seen.push_back(s.domain_id);
  const std::vector<DomainSample>* samples = nullptr;
  if (split == "seen") {
    samples = &b.test_seen;
  } else if (split == "unseen") {
    samples = &b.test_unseen;
  } else {
    samples = &b.source_test;
    seen = {samples->empty() ? 0 : samples->front().domain_id};
  }
  emit(out, metric_csv(evaluate(state, bb, *samples, seen), source_only ? "source_only" : "apex"));
  return 0;
}

int ablate_cmd(const std::string& config, const std::string& bench_dir, const std::string& out) {
  const TrainConfig tc = load_config(config);
  const Benchmark b = load_benchmark(bench_dir);
  const FrozenBackbone bb = backbone_calibrate(b.source_train);
  const std::string csv = ablation_csv(run_ablation(tc, b, bb));
  if (!out.empty()) {
    write_manifest(out, "ablate", tc, backbone_kv(bb));
    write_text(fs::path(out) / "ablation.csv", csv);
  } else {
    std::cout << csv;
  }
  return 0;
}

int sweep_cmd(const std::string& config, const std::string& bench_dir,
              std::vector<std::size_t> slots, const std::string& out) {
  TrainConfig tc = load_config(config);
  if (!slots.empty()) tc.slot_list = slots;
  const Benchmark b = bench_dir.empty() ? build_benchmark(benchmark_config(tc), tc.bench_seed)
                                        : load_benchmark(bench_dir);
  const FrozenBackbone bb = backbone_calibrate(b.source_train);
  const std::string csv = sweep_csv(slot_sweep(tc, b, bb, tc.slot_list));
  if (!out.empty()) {
    write_manifest(out, "sweep-slots", tc, backbone_kv(bb));
    write_text(fs::path(out) / "sweep.csv", csv);
  } else {
    std::cout << csv;
  }
  return 0;
}

int viz_cmd(const std::string& ckpt, const std::string& bench_dir, const std::string& out) {
  const LoadedCheckpoint loaded = load_checkpoint(ckpt);
  const Benchmark b = load_benchmark(bench_dir);
  const TrainConfig tc = load_config("");
  const double top = loaded.manifest.has("top_fraction")
                         ? loaded.manifest.get_double("top_fraction")
                         : tc.top_fraction;
  const std::vector<DomainSample> samples = concat(b.test_seen, b.test_unseen);
  const ActivationReport r = export_activations(loaded.state, samples, top);
  const fs::path stem = fs::path(out) / "activations";
  write_activation_files(r, stem);
  fs::create_directories(fs::path(out) / "images");
  for (std::size_t i = 0; i < samples.size(); i += std::max<std::size_t>(1, samples.size() / 8)) {
    const std::string name = "sample" + std::to_string(i) + "_d" +
                             std::to_string(samples[i].domain_id);
    write_pnm((fs::path(out) / "images" / (name + "_input.pgm")).string(), samples[i].image);
    write_pnm((fs::path(out) / "images" / (name + "_prompted.pgm")).string(),
              apex_forward(loaded.state, samples[i].image).image);
  }
  std::printf("top-slot Jaccard: within-domain %.4f, cross-domain %.4f\n", r.within, r.across);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Fourier amplitude prompting with a cosine-addressed prompt memory"};
  app.require_subcommand(1);

  std::string config, bench, out, ckpt, split = "seen";
  std::optional<std::uint64_t> seed;
  bool source_only = false;
  std::vector<std::size_t> slots;

  auto* gen = app.add_subcommand("gen-bench", "Generate and save the synthetic benchmark");
  gen->add_option("--config", config, "key = value config file")->check(CLI::ExistingFile);
  gen->add_option("--seed", seed, "Benchmark seed (overrides bench_seed)");
  gen->add_option("--out", out, "Output directory")->required();

  auto* tr = app.add_subcommand("train", "Train one model per seed and save checkpoints");
  tr->add_option("--config", config, "key = value config file")->check(CLI::ExistingFile);
  tr->add_option("--bench", bench, "Benchmark directory")->required()->check(CLI::ExistingDirectory);
  tr->add_option("--seed", seed, "Train this seed only");
  tr->add_option("--out", out, "Output directory")->required();

  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on one split");
  ev->add_option("--ckpt", ckpt, "Checkpoint written by train")->check(CLI::ExistingFile);
  ev->add_option("--bench", bench, "Benchmark directory")->required()->check(CLI::ExistingDirectory);
  ev->add_option("--split", split, "seen, unseen or source")
      ->check(CLI::IsMember({"seen", "unseen", "source"}));
  ev->add_flag("--source-only", source_only, "Skip prompting");
  ev->add_option("--out", out, "CSV path (default: stdout)");

  auto* ab = app.add_subcommand("ablate", "Memory on/off x LFC on/off over all seeds");
  ab->add_option("--config", config, "key = value config file")->check(CLI::ExistingFile);
  ab->add_option("--bench", bench, "Benchmark directory")->required()->check(CLI::ExistingDirectory);
  ab->add_option("--out", out, "Output directory (default: CSV to stdout)");

  auto* sw = app.add_subcommand("sweep-slots", "Train over a list of slot counts");
  sw->add_option("--config", config, "key = value config file")->check(CLI::ExistingFile);
  sw->add_option("--bench", bench, "Benchmark directory (default: generate from the config)")
      ->check(CLI::ExistingDirectory);
  sw->add_option("--j-list", slots, "Slot counts")->delimiter(',');
  sw->add_option("--out", out, "Output directory (default: CSV to stdout)");

  auto* viz = app.add_subcommand("viz-mem", "Export slot activations and prompted images");
  viz->add_option("--ckpt", ckpt, "Checkpoint written by train")->required()->check(CLI::ExistingFile);
  viz->add_option("--bench", bench, "Benchmark directory")->required()->check(CLI::ExistingDirectory);
  viz->add_option("--out", out, "Output directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) return gen_bench(config, seed, out);
    if (*tr) return train_cmd(config, bench, seed, out);
    if (*ev) return eval_cmd(ckpt, bench, split, source_only, out);
    if (*ab) return ablate_cmd(config, bench, out);
    if (*sw) return sweep_cmd(config, bench, slots, out);
    if (*viz) return viz_cmd(ckpt, bench, out);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "apex: %s\n", e.what());
    return 1;
  }
  return 0;
}
