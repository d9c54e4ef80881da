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

// Finite-difference verification of reverse-mode gradients.

#pragma once

#include <functional>

#include "apex/autodiff.hpp"
#include "apex/tensor.hpp"

namespace apex {

inline constexpr double kFiniteDifferenceStep = 1e-5;

/// Central differences of the scalar `loss()` w.r.t. every entry of `param`.
/// `param` is perturbed in place and restored.
Tensor numerical_gradient(const std::function<double()>& loss, Tensor& param,
                          double step = kFiniteDifferenceStep);

/// ||a - b||_2 / max(||a||_2, ||b||_2); 0 when both are zero.
double relative_error(const Tensor& a, const Tensor& b);

/// Rebuilds `build()` (which must return a scalar Var depending on `param`),
/// backpropagates, and compares d/d(param) with central differences.
/// Returns the relative error.
double check_gradient(const std::function<ad::Var()>& build, ad::Var& param,
                      double step = kFiniteDifferenceStep);

}  // namespace apex
