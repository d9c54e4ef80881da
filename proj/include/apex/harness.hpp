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

// Training, evaluation and the desk-scale experiments.

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "apex/apex.hpp"
#include "apex/config.hpp"
#include "apex/losses.hpp"
#include "apex/synthdata.hpp"

namespace apex {

enum class Optimizer { kSgd, kAdam };

struct TrainConfig {
  ApexConfig apex;
  std::size_t epochs = 20;
  std::size_t domains_per_batch = 2;   // P
  std::size_t samples_per_domain = 4;  // S
  Optimizer optimizer = Optimizer::kSgd;  // for the MLPs; the memory always uses SGD
  double adam_lr = 1e-3;
  bool use_lfc = true;
  bool lfc_positive_in_denominator = false;
  std::vector<std::uint64_t> seeds{0, 1, 2};
  std::uint64_t bench_seed = 2024;
  std::size_t train_per_domain = 200;
  std::size_t test_per_domain = 50;
  std::vector<std::size_t> slot_list{1, 5, 25, 75, 150, 300};
  double top_fraction = 0.1;

  void validate() const;
  KeyValues to_kv() const;
  /// Keys absent from `kv` keep their defaults; unknown keys are rejected.
  static TrainConfig from_kv(const KeyValues& kv);
};

/// Benchmark config for the sample counts in `tc`, default domains otherwise.
BenchmarkConfig benchmark_config(const TrainConfig& tc);

/// Precomputed spectra and encoder inputs of a sample set.
struct PreparedSet {
  std::vector<const DomainSample*> samples;
  std::vector<Spectrum> spectra;
  Tensor inputs;  // [n x L]
  Tensor masks;   // [n x h*w]

  std::size_t size() const { return samples.size(); }
};

PreparedSet prepare_set(std::span<const DomainSample> samples, const RegionLayout& layout);

struct TrainResult {
  ApexState state;
  std::vector<LossReport> log;
};

/// Optimizes APEX on bench.train_seen against the frozen backbone. One epoch
/// is ceil(n_train / (P * S)) steps. `seed` drives initialization and batch
/// sampling. Throws TrainingDivergedError on a non-finite loss.
TrainResult train(const TrainConfig& config, const Benchmark& bench, const FrozenBackbone& bb,
                  std::uint64_t seed);

struct DomainMetric {
  int domain_id = 0;
  bool seen = false;
  std::size_t count = 0;
  double dice = 0.0;  // percent, mean over samples
  double iou = 0.0;   // percent
};

struct MetricReport {
  std::vector<DomainMetric> domains;  // ascending domain id

  /// Unweighted mean over the matching domains; NaN when none match.
  double mean_dice(bool seen) const;
  double mean_iou(bool seen) const;
  double total_dice() const;
  double total_iou() const;
};

/// Dice and IoU (percent) of thresholded predictions. `state` null means
/// source-only (no prompting). Domains listed in `seen_ids` are flagged seen.
MetricReport evaluate(const ApexState* state, const FrozenBackbone& bb,
                      std::span<const DomainSample> samples, std::span<const int> seen_ids);

/// Seen and unseen test splits together.
MetricReport evaluate_benchmark(const ApexState* state, const FrozenBackbone& bb,
                                const Benchmark& bench);

std::string metric_csv(const MetricReport& r, const std::string& label);

struct AblationRow {
  std::uint64_t seed = 0;
  bool memory = true;
  bool lfc = true;
  MetricReport report;
  double final_lfc = 0.0;       // mean lfc over the last 10% of steps
  bool memory_untouched = false;  // B hash unchanged by training
};

std::vector<AblationRow> run_ablation(const TrainConfig& config, const Benchmark& bench,
                                      const FrozenBackbone& bb);
std::string ablation_csv(std::span<const AblationRow> rows);

struct SweepRow {
  std::size_t slots = 0;
  std::uint64_t seed = 0;
  MetricReport report;
};

std::vector<SweepRow> slot_sweep(const TrainConfig& config, const Benchmark& bench,
                                 const FrozenBackbone& bb, std::span<const std::size_t> slots);
std::string sweep_csv(std::span<const SweepRow> rows);

struct ActivationReport {
  std::vector<int> domain_ids;                   // per sample
  std::vector<std::vector<std::size_t>> top;     // per sample, ascending slot indices
  Tensor addressing;                             // [n x J]
  std::vector<int> domains;                      // ascending distinct ids
  Tensor jaccard;                                // [D x D] mean pairwise overlap
  double within = 0.0;                           // mean over same-domain pairs
  double across = 0.0;                           // mean over cross-domain pairs
};

/// Top max(1, round(fraction * J)) slots by addressing value per sample, ties
/// broken by lower index, and mean Jaccard overlaps between domains.
ActivationReport export_activations(const ApexState& state, std::span<const DomainSample> samples,
                                    double top_fraction = 0.1);
std::string activation_csv(const ActivationReport& r);
/// Writes <stem>.csv (per sample slots), <stem>_jaccard.csv and <stem>.pgm.
void write_activation_files(const ActivationReport& r, const std::filesystem::path& stem);

}  // namespace apex
