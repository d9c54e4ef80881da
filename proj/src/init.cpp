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

#include "apex/init.hpp"

#include <algorithm>
#include <cmath>

#include "apex/errors.hpp"
#include "apex/random.hpp"

namespace apex {

namespace {

double dot(const double* a, const double* b, std::size_t k) {
  double s = 0.0;
  for (std::size_t i = 0; i < k; ++i) s += a[i] * b[i];
  return s;
}

// Orthonormalizes rows [begin, end) of `m` in place. Redraws a row whose
// residual collapses (probability zero for Gaussian input, but cheap).
void orthonormalize_block(Tensor& m, std::size_t begin, std::size_t end, std::size_t k,
                          Rng& rng) {
  double* base = m.data().data();
  for (std::size_t r = begin; r < end; ++r) {
    double* row = base + r * k;
    for (int attempt = 0;; ++attempt) {
      for (int pass = 0; pass < 2; ++pass) {
        for (std::size_t q = begin; q < r; ++q) {
          const double* prev = base + q * k;
          const double proj = dot(row, prev, k);
          for (std::size_t i = 0; i < k; ++i) row[i] -= proj * prev[i];
        }
      }
      const double n = std::sqrt(dot(row, row, k));
      if (n > 1e-8 || attempt > 8) {
        for (std::size_t i = 0; i < k; ++i) row[i] /= n;
        break;
      }
      for (std::size_t i = 0; i < k; ++i) row[i] = normal(rng);
    }
  }
}

}  // namespace

Tensor orthogonal_rows(std::size_t j, std::size_t k, std::uint64_t seed, bool allow_blocks) {
  if (j == 0 || k == 0) throw DomainError("orthogonal_rows: empty shape");
  if (j > k && !allow_blocks) {
    throw DomainError("orthogonal_rows: " + std::to_string(j) + " rows cannot be orthonormal in " +
                      std::to_string(k) + " dimensions (enable block fallback)");
  }
  Rng rng(seed);
  Tensor m(Shape{j, k});
  for (auto& v : m.storage()) v = normal(rng);
  for (std::size_t begin = 0; begin < j; begin += k) {
    orthonormalize_block(m, begin, std::min(j, begin + k), k, rng);
  }
  return m;
}

double gram_deviation(const Tensor& m, std::size_t block) {
  const std::size_t j = m.dim(0), k = m.dim(1);
  const double* base = m.data().data();
  double worst = 0.0;
  for (std::size_t a = 0; a < j; ++a) {
    for (std::size_t b = a; b < j; ++b) {
      if (block && a / block != b / block) continue;
      const double target = a == b ? 1.0 : 0.0;
      worst = std::max(worst, std::abs(dot(base + a * k, base + b * k, k) - target));
    }
  }
  return worst;
}

}  // namespace apex
