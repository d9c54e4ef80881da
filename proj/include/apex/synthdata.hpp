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

// Synthetic multi-domain segmentation benchmark and the frozen toy backbone.
//
// Scenes are dark textured backgrounds with a few bright elliptical lesions.
// Domains differ only by intensity gain, bias, a smooth multiplicative
// shading field and sensor noise, i.e. by low-frequency appearance.

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "apex/autodiff.hpp"
#include "apex/spectral.hpp"

namespace apex {

struct SceneConfig {
  std::size_t height = 32, width = 32;
  double background = 0.3;
  double lesion = 0.7;
  double texture = 0.03;  // half-width of uniform per-pixel texture
  std::size_t max_lesions = 3;
  double min_radius = 2.5, max_radius = 6.0;
  double min_area = 0.02, max_area = 0.20;  // lesion area fraction bounds
};

struct Scene {
  Image image;  // one channel
  Tensor mask;  // [h, w], binary, nonempty
};

/// Deterministic in (seed, cfg). Throws DomainError for sides that are odd or
/// below 32, or inconsistent bounds.
Scene gen_base_scene(std::uint64_t seed, const SceneConfig& cfg = {});

/// Shading uses the three lowest nonzero cosine modes, (u, v) = (1, 0), (0, 1),
/// (1, 1), with per-sample random phases.
struct DomainSpec {
  int id = 0;
  std::string name;
  double gain = 1.0;
  double bias = 0.0;
  std::array<double, 3> shading{};
  double noise_sigma = 0.0;
  double gain_jitter = 0.0;  // per-sample relative gain perturbation half-width
  double bias_jitter = 0.0;  // per-sample bias perturbation half-width

  /// Throws DomainError for gain <= 0, negative noise or jitter, or a shading
  /// sum that could make the field non-positive.
  void validate() const;
};

/// 1 + sum_k shading[k] * cos(2 pi (u_k y / h + v_k x / w) + phi_k).
Tensor shading_field(const DomainSpec& spec, std::size_t h, std::size_t w, std::uint64_t seed);

/// clamp(gain' * field * img + bias' + noise, 0, 1), with gain' and bias' the
/// jittered per-sample values drawn from `seed`.
Image apply_domain(const Image& img, const DomainSpec& spec, std::uint64_t seed);

struct DomainSample {
  Image image;
  Tensor mask;  // [h, w]
  int domain_id = 0;
  std::uint64_t scene_seed = 0;
};

struct BenchmarkConfig {
  SceneConfig scene;
  DomainSpec source;
  std::vector<DomainSpec> seen;
  std::vector<DomainSpec> unseen;
  std::size_t train_per_domain = 200;
  std::size_t test_per_domain = 50;
};

/// Source plus A, B seen and C, D unseen domains.
BenchmarkConfig default_benchmark_config();

struct Benchmark {
  BenchmarkConfig config;
  std::uint64_t seed = 0;
  std::vector<DomainSample> source_train, source_test;
  std::vector<DomainSample> train_seen, test_seen, test_unseen;

  const std::vector<DomainSample>& split(const std::string& name) const;
  static const std::vector<std::string>& split_names();
};

/// Every sample gets its own scene seed, so no base scene is shared between
/// splits. Throws DomainError for fewer than two seen or unseen domains, a
/// domain id used twice, or an unseen (gain, bias) inside the seen hull.
Benchmark build_benchmark(const BenchmarkConfig& cfg, std::uint64_t seed);

/// True if (gain, bias) lies in the convex hull of the given domains' values.
bool in_convex_hull(std::span<const DomainSpec> hull, double gain, double bias);

/// sample_id, domain_id, domain, split, scene_seed and the domain spec fields.
std::string benchmark_manifest_csv(const Benchmark& b);

/// Writes manifest.csv plus <split>_images.apxt / <split>_masks.apxt.
void save_benchmark(const Benchmark& b, const std::filesystem::path& dir);
/// Reads what save_benchmark wrote. Domain specs are not restored.
Benchmark load_benchmark(const std::filesystem::path& dir);

/// pred = sigmoid((blur_r(x) - t) / s). Immutable once calibrated.
struct FrozenBackbone {
  double threshold = 0.5;
  double slope = 0.05;
  int radius = 1;

  std::uint64_t hash() const;
};

/// Batch forward on single-channel images stored as rows of [n x h*w].
/// Differentiable with respect to the images only.
ad::Var backbone_forward(const FrozenBackbone& bb, const ad::Var& images, std::size_t h,
                         std::size_t w);
/// Probability map [h, w] for one image.
Tensor backbone_predict(const FrozenBackbone& bb, const Image& img);

/// Hard Dice in [0, 1] of a thresholded probability map; 1 when both are empty.
double hard_dice(std::span<const double> pred, std::span<const double> mask,
                 double threshold = 0.5);

struct CalibrationGrid {
  double t_lo = 0.2, t_hi = 0.8, t_step = 0.01;
  std::vector<double> slopes{0.01, 0.02, 0.03, 0.05, 0.075, 0.1, 0.15, 0.2};
  int radius = 1;
};

/// t: median of the grid points with maximal mean hard Dice. s: the slope
/// with minimal mean Dice+CE loss at that t. Throws DomainError on an empty
/// set or a set whose masks are all empty.
FrozenBackbone backbone_calibrate(std::span<const DomainSample> source,
                                  const CalibrationGrid& grid = {});

/// Mean hard Dice of the backbone on the given samples.
double backbone_mean_dice(const FrozenBackbone& bb, std::span<const DomainSample> samples);

}  // namespace apex
