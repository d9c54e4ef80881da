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

#include "apex/mlp.hpp"

#include <cmath>

#include "apex/errors.hpp"

namespace apex {

std::vector<ad::Var> MlpParams::parameters() const {
  std::vector<ad::Var> out;
  out.reserve(layers.size() * 2);
  for (const auto& l : layers) {
    out.push_back(l.weight);
    out.push_back(l.bias);
  }
  return out;
}

void MlpParams::validate() const {
  if (layers.empty()) throw ShapeError("mlp: no layers");
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& l = layers[i];
    if (l.weight.value().rank() != 2 || l.bias.value().rank() != 1 ||
        l.bias.value().dim(0) != l.out()) {
      throw ShapeError("mlp: malformed layer " + std::to_string(i));
    }
    if (i > 0 && layers[i - 1].out() != l.in()) {
      throw ShapeError("mlp: layer " + std::to_string(i) + " expects " +
                       std::to_string(l.in()) + " inputs, previous layer emits " +
                       std::to_string(layers[i - 1].out()));
    }
  }
}

MlpParams make_mlp(std::span<const std::size_t> widths, const MlpInit& init, Rng& rng) {
  if (widths.size() < 2) throw ShapeError("make_mlp: need at least input and output widths");
  MlpParams p;
  const std::size_t n_layers = widths.size() - 1;
  for (std::size_t i = 0; i < n_layers; ++i) {
    const std::size_t in = widths[i], out = widths[i + 1];
    const bool last = i + 1 == n_layers;
    const Activation act = last ? init.output : init.hidden;
    const double limit = act == Activation::kRelu
                             ? std::sqrt(6.0 / static_cast<double>(in))
                             : std::sqrt(6.0 / static_cast<double>(in + out));
    Tensor w(Shape{out, in});
    if (!(last && init.zero_output_layer)) {
      for (auto& v : w.storage()) v = uniform(rng, -limit, limit);
    }
    p.layers.push_back({ad::parameter(std::move(w)), ad::parameter(Tensor(Shape{out})), act});
  }
  return p;
}

MlpParams mlp_from_tensors(std::span<const Tensor> weights_and_biases,
                           std::span<const Activation> activations) {
  if (weights_and_biases.size() != 2 * activations.size()) {
    throw ShapeError("mlp_from_tensors: expected a weight and bias per layer");
  }
  MlpParams p;
  for (std::size_t i = 0; i < activations.size(); ++i) {
    p.layers.push_back({ad::parameter(weights_and_biases[2 * i]),
                        ad::parameter(weights_and_biases[2 * i + 1]), activations[i]});
  }
  p.validate();
  return p;
}

ad::Var mlp_forward(const MlpParams& params, const ad::Var& x) {
  params.validate();
  if (x.value().shape().back() != params.in()) {
    throw ShapeError("mlp_forward: input width " + std::to_string(x.value().shape().back()) +
                     " but first layer expects " + std::to_string(params.in()));
  }
  ad::Var h = x;
  for (const auto& l : params.layers) {
    h = ad::linear(h, l.weight, l.bias);
    if (l.activation == Activation::kRelu) h = ad::relu(h);
  }
  return h;
}

}  // namespace apex
