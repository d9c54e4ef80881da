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
#include <cstdint>

#include "apex/tensor.hpp"

namespace apex {

/// j x k matrix with orthonormal rows (Gaussian draw, Gram-Schmidt with one
/// re-orthogonalization pass). j > k throws DomainError unless
/// `allow_blocks`, in which case rows come in consecutive blocks of at most k
/// rows that are orthonormal within the block only.
Tensor orthogonal_rows(std::size_t j, std::size_t k, std::uint64_t seed,
                       bool allow_blocks = false);

/// max |(M M^T - I)_ab| over all entries, optionally restricted to pairs in
/// the same block of `block` rows (0 = no restriction).
double gram_deviation(const Tensor& m, std::size_t block = 0);

}  // namespace apex
