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

#include "apex/optim.hpp"

#include <cmath>

#include "apex/errors.hpp"

namespace apex {

namespace {

void require_finite_grad(const Tensor& g) {
  if (!g.all_finite()) throw TrainingDivergedError("non-finite gradient");
}

}  // namespace

void sgd_step(Tensor& param, const Tensor& grad, double eta) {
  require_same_shape(param, grad, "sgd_step");
  require_finite_grad(grad);
  for (std::size_t i = 0; i < param.size(); ++i) param[i] -= eta * grad[i];
}

void sgd_step(std::span<ad::Var> params, double eta) {
  for (const auto& p : params) {
    require_same_shape(p.value(), p.grad(), "sgd_step");
    require_finite_grad(p.grad());
  }
  for (auto& p : params) sgd_step(p.mutable_value(), p.grad(), eta);
}

void zero_grads(std::span<ad::Var> params) {
  for (auto& p : params) p.zero_grad();
}

void Adam::step(std::span<ad::Var> params) {
  if (m_.empty()) {
    for (const auto& p : params) {
      m_.emplace_back(p.value().shape());
      v_.emplace_back(p.value().shape());
    }
  }
  if (m_.size() != params.size()) throw ShapeError("Adam: parameter list changed");
  for (const auto& p : params) require_finite_grad(p.grad());
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& w = params[i].mutable_value();
    const Tensor& g = params[i].grad();
    require_same_shape(w, m_[i], "Adam");
    for (std::size_t e = 0; e < w.size(); ++e) {
      m_[i][e] = beta1_ * m_[i][e] + (1.0 - beta1_) * g[e];
      v_[i][e] = beta2_ * v_[i][e] + (1.0 - beta2_) * g[e] * g[e];
      w[e] -= lr_ * (m_[i][e] / c1) / (std::sqrt(v_[i][e] / c2) + eps_);
    }
  }
}

}  // namespace apex
