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

#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "apex/autodiff.hpp"
#include "apex/random.hpp"

namespace apex {

enum class Activation { kLinear, kRelu };

struct DenseLayer {
  ad::Var weight;  // [out x in]
  ad::Var bias;    // [out]
  Activation activation = Activation::kLinear;

  std::size_t in() const { return weight.value().dim(1); }
  std::size_t out() const { return weight.value().dim(0); }
};

/// Stack of dense layers; weights are autodiff parameters.
struct MlpParams {
  std::vector<DenseLayer> layers;

  std::size_t in() const { return layers.front().in(); }
  std::size_t out() const { return layers.back().out(); }
  std::vector<ad::Var> parameters() const;
  /// Throws ShapeError unless adjacent layers chain.
  void validate() const;
};

struct MlpInit {
  Activation hidden = Activation::kRelu;
  Activation output = Activation::kLinear;
  bool zero_output_layer = false;
};

/// widths = {in, h1, ..., out}. He-uniform for ReLU layers, Glorot-uniform for
/// linear ones, zero biases.
MlpParams make_mlp(std::span<const std::size_t> widths, const MlpInit& init, Rng& rng);

/// Builds from explicit tensors (checkpoint loading, tests).
MlpParams mlp_from_tensors(std::span<const Tensor> weights_and_biases,
                           std::span<const Activation> activations);

/// Sequential affine + activation. `x` is [in] or [n x in].
ad::Var mlp_forward(const MlpParams& params, const ad::Var& x);

}  // namespace apex
