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

#include "apex/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace apex {

Tensor numerical_gradient(const std::function<double()>& loss, Tensor& param, double step) {
  Tensor g(param.shape());
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double saved = param[i];
    param[i] = saved + step;
    const double up = loss();
    param[i] = saved - step;
    const double down = loss();
    param[i] = saved;
    g[i] = (up - down) / (2.0 * step);
  }
  return g;
}

double relative_error(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "relative_error");
  double diff = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  const double denom = std::sqrt(std::max(na, nb));
  return denom == 0.0 ? 0.0 : std::sqrt(diff) / denom;
}

double check_gradient(const std::function<ad::Var()>& build, ad::Var& param, double step) {
  param.zero_grad();
  ad::backward(build());
  const Tensor analytic = param.grad();
  param.zero_grad();
  const Tensor numeric = numerical_gradient(
      [&] { return build().value().item(); }, param.mutable_value(), step);
  return relative_error(analytic, numeric);
}

}  // namespace apex
