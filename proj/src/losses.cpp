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

#include "apex/losses.hpp"

#include <algorithm>
#include <cstdio>
#include <map>

#include "apex/errors.hpp"
#include "apex/random.hpp"

namespace apex {

namespace {

struct SegInputs {
  ad::Var pred;  // [n x p]
  Tensor gt;     // [n x p]
};

SegInputs as_rows(const ad::Var& pred, const Tensor& gt, const char* who) {
  require_same_shape(pred.value(), gt, who);
  if (pred.value().rank() != 1 && pred.value().rank() != 2)
    throw ShapeError(std::string(who) + ": expected a map or a batch of maps");
  for (double g : gt.data())
    if (g != 0.0 && g != 1.0) throw DomainError(std::string(who) + ": mask is not binary");
  if (pred.value().rank() == 2) return {pred, gt};
  const std::size_t n = gt.size();
  return {ad::reshape(pred, {1, n}), gt.reshaped({1, n})};
}

}  // namespace

ad::Var dice_loss(const ad::Var& pred, const Tensor& gt) {
  auto [p, g] = as_rows(pred, gt, "dice_loss");
  for (double v : p.value().data())
    if (!(v >= 0.0 && v <= 1.0)) throw DomainError("dice_loss: prediction outside [0, 1]");
  Tensor gsum({g.dim(0)});
  for (std::size_t r = 0; r < g.dim(0); ++r)
    for (std::size_t c = 0; c < g.dim(1); ++c) gsum[r] += g.at(r, c);
  const ad::Var inter = ad::sum(ad::mul(p, ad::constant(g)), 1);
  const ad::Var num = ad::add_scalar(ad::mul_scalar(inter, 2.0), kDiceSmoothing);
  const ad::Var den = ad::add_scalar(ad::add(ad::sum(p, 1), ad::constant(gsum)), kDiceSmoothing);
  return ad::mean(ad::rsub_scalar(1.0, ad::div(num, den)));
}

ad::Var ce_loss(const ad::Var& pred, const Tensor& gt) {
  auto [p, g] = as_rows(pred, gt, "ce_loss");
  const ad::Var pc = ad::clamp(p, kProbClamp, 1.0 - kProbClamp);
  Tensor not_g = g;
  for (auto& v : not_g.storage()) v = 1.0 - v;
  const ad::Var ll = ad::add(ad::mul(ad::constant(g), ad::log(pc)),
                             ad::mul(ad::constant(not_g), ad::log(ad::rsub_scalar(1.0, pc))));
  return ad::mul_scalar(ad::mean(ll), -1.0);
}

SegLoss seg_loss(const ad::Var& pred, const Tensor& gt) {
  SegLoss out;
  out.dice = dice_loss(pred, gt);
  out.ce = ce_loss(pred, gt);
  out.total = ad::add(out.dice, out.ce);
  return out;
}

ad::Var lfc_anchor_terms(const ad::Var& similarities, std::span<const int> labels,
                         std::span<const std::size_t> anchors,
                         std::span<const std::size_t> positives, const LfcOptions& opts) {
  if (!(opts.tau > 0.0)) throw DomainError("lfc: temperature must be positive");
  const std::size_t n = labels.size();
  if (similarities.value().shape() != Shape{n, n} || positives.size() != anchors.size())
    throw ShapeError("lfc: similarity matrix, labels and positives disagree");

  const ad::Var scaled = ad::mul_scalar(similarities, 1.0 / opts.tau);
  const ad::Var rows = ad::gather_rows(scaled, anchors);
  std::vector<bool> mask(anchors.size() * n);
  std::vector<std::size_t> pos_flat(anchors.size());
  for (std::size_t k = 0; k < anchors.size(); ++k) {
    const std::size_t i = anchors[k], p = positives[k];
    if (i >= n || p >= n || p == i || labels[p] != labels[i])
      throw DomainError("lfc: invalid positive for anchor " + std::to_string(i));
    bool any_negative = false;
    for (std::size_t j = 0; j < n; ++j) {
      mask[k * n + j] = labels[j] != labels[i];
      any_negative = any_negative || mask[k * n + j];
    }
    if (!any_negative) throw DomainError("lfc: anchor " + std::to_string(i) + " has no negatives");
    if (opts.positive_in_denominator) mask[k * n + p] = true;
    pos_flat[k] = k * n + p;
  }
  return ad::sub(ad::masked_logsumexp_rows(rows, mask), ad::pick(rows, pos_flat));
}

ad::Var lfc_loss(const ad::Var& embeddings, std::span<const int> labels,
                 std::span<const std::size_t> positives, const LfcOptions& opts) {
  std::map<int, std::size_t> counts;
  for (int l : labels) ++counts[l];
  if (counts.size() < 2) throw DomainError("lfc: need at least two domains in the batch");
  for (const auto& [label, count] : counts)
    if (count < 2) throw DomainError("lfc: domain " + std::to_string(label) + " has no positive");
  std::vector<std::size_t> anchors(labels.size());
  for (std::size_t i = 0; i < anchors.size(); ++i) anchors[i] = i;
  return ad::mean(lfc_anchor_terms(ad::cosine_rows(embeddings, embeddings), labels, anchors,
                                   positives, opts));
}

std::size_t BatchPlan::size() const {
  std::size_t n = 0;
  for (const auto& s : samples) n += s.size();
  return n;
}

std::vector<std::size_t> BatchPlan::flat_samples() const {
  std::vector<std::size_t> out;
  for (const auto& s : samples) out.insert(out.end(), s.begin(), s.end());
  return out;
}

std::vector<int> BatchPlan::flat_labels() const {
  std::vector<int> out;
  for (std::size_t d = 0; d < domains.size(); ++d) out.insert(out.end(), samples[d].size(), domains[d]);
  return out;
}

BatchPlan sample_batch(std::span<const std::vector<std::size_t>> pools,
                       std::span<const int> domain_ids, std::size_t p, std::size_t s,
                       std::uint64_t seed) {
  if (p < 2 || s < 2) throw DomainError("sample_batch: need P >= 2 and S >= 2");
  if (pools.size() != domain_ids.size()) throw ShapeError("sample_batch: pools and ids disagree");
  if (pools.size() < p) throw DomainError("sample_batch: fewer domains than P");
  for (const auto& pool : pools)
    if (pool.size() < s) throw DomainError("sample_batch: domain has fewer than S samples");

  Rng rng(seed);
  std::vector<std::size_t> order(pools.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  order = choose_k(std::move(order), p, rng);
  std::sort(order.begin(), order.end());

  BatchPlan plan;
  for (std::size_t d : order) {
    plan.domains.push_back(domain_ids[d]);
    plan.samples.push_back(choose_k(pools[d], s, rng));
  }
  for (std::size_t d = 0; d < p; ++d)
    for (std::size_t m = 0; m < s; ++m) {
      std::size_t other = uniform_index(rng, s - 1);
      if (other >= m) ++other;
      plan.positives.push_back(d * s + other);
    }
  return plan;
}

std::string loss_csv_header() { return "step,seg,dice,ce,lfc,total"; }

std::string loss_csv_row(long step, const LossReport& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%ld,%.17g,%.17g,%.17g,%.17g,%.17g", step, r.seg, r.dice, r.ce,
                r.lfc, r.total);
  return buf;
}

}  // namespace apex
