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

// The prompting module: domain encoder, cosine-addressed prompt memory,
// prompt decoder and the auxiliary projection head.
//
//   z  = E(log(1 + |X_low|))          domain feature        [n x K]
//   a  = cos(z, B)                    addressing vector     [n x J]
//   z' = a B                          prompt feature        [n x K]
//   p  = sym(exp(D(z')))              amplitude multiplier  [n x L]
//   x' = IFFT(p * |X|, angle X)       prompted image
//
// With the default barrier, the dependence of a on B is cut, so B only
// receives a^T dL/dz'; the encoder still gets gradient through a.

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "apex/autodiff.hpp"
#include "apex/config.hpp"
#include "apex/mlp.hpp"
#include "apex/spectral.hpp"

namespace apex {

struct ApexConfig {
  std::size_t feature_dim = 256;  // K
  std::size_t slots = 150;        // J
  std::vector<std::size_t> encoder_hidden{64, 64, 64};
  std::vector<std::size_t> decoder_hidden{64, 64, 64};
  std::vector<std::size_t> head_hidden{64};
  std::size_t aux_dim = 64;  // K_aux
  double beta = 0.25;
  double tau = 0.1;
  double eta = 3e-3;
  std::uint64_t seed = 0;
  bool use_memory = true;        // off: z' = z
  bool softmax_addressing = false;
  bool full_graph_memory = false;  // off: memory gradient per the barrier rule
  bool allow_block_init = false;   // J > K via stacked orthonormal blocks

  /// Throws DomainError on zero sizes, beta outside (0, 1], tau or eta <= 0,
  /// or J > K without allow_block_init.
  void validate() const;
  void to_kv(KeyValues& kv) const;
  /// Keys absent from `kv` keep their defaults.
  static ApexConfig from_kv(const KeyValues& kv);
};

struct ApexState {
  ApexConfig config;
  RegionLayout layout;
  MlpParams encoder;
  ad::Var memory;  // B [J x K]
  MlpParams decoder;
  std::optional<MlpParams> head;
  Tensor input_shift;  // [L], subtracted from the encoder input
  Tensor input_scale;  // [L], multiplies the shifted input
  long step = 0;

  /// Encoder, decoder and head parameters (not the memory).
  std::vector<ad::Var> network_parameters() const;
  std::uint64_t memory_hash() const;
};

/// Fresh state for images of the given geometry. B has orthonormal rows and
/// the decoder's final layer is zero, so the initial prompt is the identity.
/// All draws derive from config.seed.
ApexState init_apex(const ApexConfig& config, std::size_t height, std::size_t width,
                    std::size_t channels, bool with_head = true);

/// log(1 + amplitude) over the low-frequency region, region order.
Tensor encoder_input(const Spectrum& spec, const RegionLayout& layout);

/// Sets the encoder-input shift and scale to the per-entry mean and inverse
/// standard deviation of `raw` [n x L]. Entries with zero spread keep scale 1.
void fit_input_standardization(ApexState& state, const Tensor& raw);
/// Applies the state's shift and scale to raw encoder inputs [L] or [n x L].
Tensor standardize_input(const ApexState& state, const Tensor& raw);

ad::Var encode_domain(const MlpParams& encoder, const ad::Var& inputs);
/// cos(z_i, b_j) for all i, j; softmax across slots if requested. With
/// `barrier` the memory enters through stop_gradient.
ad::Var address(const ad::Var& memory, const ad::Var& z, bool softmax = false,
                bool barrier = true);
ad::Var retrieve(const ad::Var& memory, const ad::Var& a);
/// Symmetrized exp of the decoder output: [n x layout.size()].
ad::Var decode_prompt(const MlpParams& decoder, const ad::Var& z_prime, const RegionLayout& layout);
ad::Var project_aux(const MlpParams& head, const ad::Var& z);

struct ApexGraph {
  ad::Var z, a, z_prime, multipliers, images;
  ad::Var aux;  // undefined unless requested and a head exists
};

/// Builds the full prompting graph for a batch of spectra. `memory` is the
/// node standing in for B (the parameter itself, or a constant copy when the
/// caller applies the explicit memory gradient).
ApexGraph apex_graph(const ApexState& state, std::span<const Spectrum* const> spectra,
                     const ad::Var& inputs, const ad::Var& memory, bool with_aux);

struct ApexOutput {
  Image image;
  Tensor addressing;  // [J], empty when the memory is off
  Tensor feature;     // [K]
};

/// Inference on one image; never touches the projection head.
ApexOutput apex_forward(const ApexState& state, const Image& img);

/// dL/dB under the barrier: a^T g, summed over the batch. a is [n x J] (or
/// [J]) and g is [n x K] (or [K]).
Tensor memory_gradient(const Tensor& a, const Tensor& g);

/// b_j <- b_j - eta * grad_j. Throws TrainingDivergedError on a non-finite
/// gradient and ShapeError on a mismatch.
void update_memory(Tensor& memory, const Tensor& grad, double eta);

/// Writes every tensor (B, then encoder, decoder and head layers) to `path`
/// and a text manifest to `path` + ".manifest". `extra` is echoed into it.
void save_checkpoint(const std::filesystem::path& path, const ApexState& state,
                     const KeyValues& extra = {});

struct LoadedCheckpoint {
  ApexState state;
  KeyValues manifest;
};

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace apex
