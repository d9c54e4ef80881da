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

#include <span>
#include <vector>

#include "apex/autodiff.hpp"
#include "apex/tensor.hpp"

namespace apex {

/// p <- p - eta * g. Throws ShapeError on mismatch and TrainingDivergedError
/// on a non-finite gradient (p is left untouched in both cases).
void sgd_step(Tensor& param, const Tensor& grad, double eta);

/// SGD over parameters using their accumulated gradients. All gradients are
/// checked before any parameter moves.
void sgd_step(std::span<ad::Var> params, double eta);

void zero_grads(std::span<ad::Var> params);

/// Adam, offered as an opt-in alternative for the MLP parameters.
class Adam {
 public:
  explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(std::span<ad::Var> params);
  long steps() const { return t_; }

 private:
  double lr_, beta1_, beta2_, eps_;
  long t_ = 0;
  std::vector<Tensor> m_, v_;
};

}  // namespace apex
