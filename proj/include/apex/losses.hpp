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

// Segmentation and low-frequency contrastive losses, plus batch planning.

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "apex/autodiff.hpp"
#include "apex/tensor.hpp"

namespace apex {

inline constexpr double kDiceSmoothing = 1.0;
inline constexpr double kProbClamp = 1e-7;

/// Per-row soft Dice loss averaged over rows. `pred` is [n x p] (or [p] for a
/// single map) with values in [0, 1]; `gt` is the binary mask of equal size.
ad::Var dice_loss(const ad::Var& pred, const Tensor& gt);

/// Mean binary cross-entropy with predictions clamped to [1e-7, 1 - 1e-7].
ad::Var ce_loss(const ad::Var& pred, const Tensor& gt);

struct SegLoss {
  ad::Var total;  // dice + ce
  ad::Var dice;
  ad::Var ce;
};

SegLoss seg_loss(const ad::Var& pred, const Tensor& gt);

struct LfcOptions {
  double tau = 0.1;
  /// Adds the positive to the denominator (standard InfoNCE). Off by default:
  /// the denominator then sums over other-domain embeddings only.
  bool positive_in_denominator = false;
};

/// Contrastive terms for the given anchors from a precomputed [n x n]
/// similarity matrix:
///   term_k = -sim(a_k, pos_k) / tau + log sum_{j : label_j != label_{a_k}} exp(sim(a_k, j) / tau).
/// Returns [anchors.size()]. Throws DomainError for tau <= 0, an invalid
/// positive (itself or another domain) or an anchor without negatives.
ad::Var lfc_anchor_terms(const ad::Var& similarities, std::span<const int> labels,
                         std::span<const std::size_t> anchors,
                         std::span<const std::size_t> positives, const LfcOptions& opts);

/// Mean of lfc_anchor_terms over every embedding row as anchor, using cosine
/// similarities; positives[i] is the positive of row i. Throws DomainError
/// for fewer than two domains or a domain with a single sample.
ad::Var lfc_loss(const ad::Var& embeddings, std::span<const int> labels,
                 std::span<const std::size_t> positives, const LfcOptions& opts);

/// Samples drawn for one step: `domains` (P entries) and, for each, S sample
/// indices. Flattening is domain-major.
struct BatchPlan {
  std::vector<int> domains;
  std::vector<std::vector<std::size_t>> samples;
  std::vector<std::size_t> positives;  // flat anchor -> flat positive

  std::size_t size() const;
  std::vector<std::size_t> flat_samples() const;
  std::vector<int> flat_labels() const;
};

/// Chooses P of the given domains and S distinct samples from each, plus one
/// uniformly drawn same-domain positive per anchor. `pools[d]` lists the
/// sample indices of domain `domain_ids[d]`. Deterministic in `seed`.
/// Throws DomainError for P < 2, S < 2, too few domains or too few samples.
BatchPlan sample_batch(std::span<const std::vector<std::size_t>> pools,
                       std::span<const int> domain_ids, std::size_t p, std::size_t s,
                       std::uint64_t seed);

struct LossReport {
  double seg = 0.0;
  double dice = 0.0;
  double ce = 0.0;
  double lfc = 0.0;
  double total = 0.0;
};

std::string loss_csv_header();
/// One CSV row, full round-trip precision.
std::string loss_csv_row(long step, const LossReport& r);

}  // namespace apex
