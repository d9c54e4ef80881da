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

#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <vector>

#include "apex/errors.hpp"
#include "apex/gradcheck.hpp"
#include "apex/losses.hpp"
#include "support/gradient_cases.hpp"

namespace apex {
namespace {

using testing::random_tensor;

// Plain-loop reference formulas, sharing nothing with the graph version.
double ref_dice(const std::vector<double>& p, const std::vector<double>& g) {
  double inter = 0, ps = 0, gs = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    inter += p[i] * g[i];
    ps += p[i];
    gs += g[i];
  }
  return 1.0 - (2.0 * inter + 1.0) / (ps + gs + 1.0);
}

double ref_ce(const std::vector<double>& p, const std::vector<double>& g) {
  double acc = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double q = std::min(std::max(p[i], 1e-7), 1.0 - 1e-7);
    acc -= g[i] * std::log(q) + (1.0 - g[i]) * std::log(1.0 - q);
  }
  return acc / static_cast<double>(p.size());
}

double eval(const ad::Var& v) { return v.value().item(); }

TEST(DiceTest, Examples) {
  const Tensor gt = Tensor::vector({1, 1, 0, 0, 1, 0, 1, 1});
  EXPECT_NEAR(eval(dice_loss(ad::constant(gt), gt)), 0.0, 1e-12);

  Tensor big_gt({400}), big_pred({400});
  for (std::size_t i = 0; i < 200; ++i) big_gt[i] = 1.0;
  for (std::size_t i = 200; i < 400; ++i) big_pred[i] = 1.0;
  EXPECT_NEAR(eval(dice_loss(ad::constant(big_pred), big_gt)), 1.0 - 1.0 / 401.0, 1e-12);

  Tensor mask({10, 10}), half({10, 10});
  for (auto& v : mask.storage()) v = 1.0;
  for (auto& v : half.storage()) v = 0.5;
  EXPECT_NEAR(eval(dice_loss(ad::constant(half.reshaped({100})), mask.reshaped({100}))),
              1.0 - 101.0 / 151.0, 1e-12);
  EXPECT_NEAR(1.0 - 101.0 / 151.0, 0.3311, 1e-4);
}

TEST(DiceTest, BatchIsMeanOfRows) {
  Rng rng(1);
  Tensor p({3, 20}), g({3, 20});
  for (auto& v : p.storage()) v = uniform(rng, 0, 1);
  for (auto& v : g.storage()) v = uniform(rng, 0, 1) < 0.3 ? 1.0 : 0.0;
  double expect = 0;
  for (std::size_t r = 0; r < 3; ++r) {
    std::vector<double> pr(20), gr(20);
    for (std::size_t c = 0; c < 20; ++c) pr[c] = p.at(r, c), gr[c] = g.at(r, c);
    expect += ref_dice(pr, gr) / 3.0;
  }
  EXPECT_NEAR(eval(dice_loss(ad::constant(p), g)), expect, 1e-12);
}

TEST(DiceTest, Errors) {
  EXPECT_THROW(dice_loss(ad::constant(Tensor({4})), Tensor({5})), ShapeError);
  EXPECT_THROW(dice_loss(ad::constant(Tensor({2})), Tensor::vector({0.5, 1})), DomainError);
  EXPECT_THROW(dice_loss(ad::constant(Tensor::vector({1.5, 0})), Tensor::vector({1, 0})),
               DomainError);
}

TEST(CeTest, Examples) {
  const Tensor gt = Tensor::vector({1, 0, 1, 0});
  EXPECT_NEAR(eval(ce_loss(ad::constant(Tensor::vector({0.5, 0.5, 0.5, 0.5})), gt)),
              std::log(2.0), 1e-12);
  EXPECT_LT(eval(ce_loss(ad::constant(gt), gt)), 1e-6);
  const Tensor ones = Tensor::vector({1, 1, 1});
  EXPECT_NEAR(eval(ce_loss(ad::constant(Tensor::vector({0.9, 0.9, 0.9})), ones)),
              -std::log(0.9), 1e-12);
  EXPECT_NEAR(-std::log(0.9), 0.1054, 1e-4);
}

TEST(SegLossTest, MatchesIndependentFormulas) {
  Rng rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> p(64), g(64);
    for (auto& v : p) v = uniform(rng, 0, 1);
    for (auto& v : g) v = uniform(rng, 0, 1) < 0.4 ? 1.0 : 0.0;
    if (trial % 10 == 0) p[3] = 0.0;  // exercise the clamp
    const Tensor pt({p.size()}, p), gt({g.size()}, g);
    const SegLoss s = seg_loss(ad::constant(pt), gt);
    EXPECT_NEAR(eval(s.dice), ref_dice(p, g), 1e-12);
    EXPECT_NEAR(eval(s.ce), ref_ce(p, g), 1e-12);
    EXPECT_EQ(eval(s.total), eval(s.dice) + eval(s.ce));
    EXPECT_GE(eval(s.dice), 0.0);
    EXPECT_LE(eval(s.dice), 1.0);
    EXPECT_GE(eval(s.total), 0.0);
  }
}

TEST(SegLossTest, PerfectPredictionNearZero) {
  const Tensor gt = Tensor::vector({1, 1, 1, 0, 0, 0, 1, 0});
  EXPECT_LT(eval(seg_loss(ad::constant(gt), gt).total), 0.1);
}

TEST(SegLossTest, GradientMatchesFiniteDifferences) {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor p({2, 16}), g({2, 16});
    for (auto& v : p.storage()) v = uniform(rng, 0.05, 0.95);
    for (auto& v : g.storage()) v = uniform(rng, 0, 1) < 0.5 ? 1.0 : 0.0;
    ad::Var x = ad::parameter(p);
    auto build = [&] { return seg_loss(x, g).total; };
    EXPECT_LT(check_gradient(build, x), 1e-4);
  }
}

// Direct scalar evaluation of one anchor term straight from the formula.
double ref_anchor(double pos, const std::vector<double>& negs, double tau) {
  double denom = 0;
  for (double n : negs) denom += std::exp(n / tau);
  return -std::log(std::exp(pos / tau) / denom);
}

// Anchor 0 with positive 1 (domain 0) and negatives 2.. (domain 1); other
// similarity entries do not enter anchor 0's term.
double anchor_zero_term(double pos, const std::vector<double>& negs, double tau,
                        bool positive_in_denominator = false) {
  const std::size_t n = 2 + negs.size();
  Tensor s({n, n});
  s.at(0, 1) = pos;
  for (std::size_t j = 0; j < negs.size(); ++j) s.at(0, 2 + j) = negs[j];
  std::vector<int> labels(n, 1);
  labels[0] = labels[1] = 0;
  const std::vector<std::size_t> anchors{0}, positives{1};
  return lfc_anchor_terms(ad::constant(s), labels, anchors, positives,
                          {tau, positive_in_denominator})
      .value()[0];
}

TEST(LfcTest, WorkedExamples) {
  EXPECT_NEAR(anchor_zero_term(1.0, {0.0}, 1.0), -1.0, 1e-10);
  for (double s : {-0.7, 0.0, 0.3, 1.0}) EXPECT_NEAR(anchor_zero_term(s, {s}, 0.2), 0.0, 1e-10);
  const double brute = -std::log(std::exp(1.6) / (std::exp(0.4) + std::exp(-0.8)));
  EXPECT_NEAR(anchor_zero_term(0.8, {0.2, -0.4}, 0.5), brute, 1e-10);
  EXPECT_NEAR(brute, ref_anchor(0.8, {0.2, -0.4}, 0.5), 1e-12);
}

TEST(LfcTest, PositiveInDenominatorFlag) {
  const double expect = -std::log(std::exp(1.6) / (std::exp(1.6) + std::exp(0.4) + std::exp(-0.8)));
  EXPECT_NEAR(anchor_zero_term(0.8, {0.2, -0.4}, 0.5, true), expect, 1e-10);
  EXPECT_GT(anchor_zero_term(0.8, {0.2, -0.4}, 0.5, true), 0.0);
}

TEST(LfcTest, MonotoneInPositiveAndNegatives) {
  Rng rng(4);
  for (int trial = 0; trial < 100; ++trial) {
    const double tau = uniform(rng, 0.05, 1.0);
    const double pos = uniform(rng, -1, 0.9);
    std::vector<double> negs(3);
    for (auto& v : negs) v = uniform(rng, -1, 0.9);
    const double base = anchor_zero_term(pos, negs, tau);
    EXPECT_LT(anchor_zero_term(pos + 0.05, negs, tau), base);
    auto bumped = negs;
    bumped[trial % 3] += 0.05;
    EXPECT_GT(anchor_zero_term(pos, bumped, tau), base);
  }
}

TEST(LfcTest, TemperatureScaling) {
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const double c = uniform(rng, 0.5, 3.0), tau = uniform(rng, 0.1, 1.0);
    const double pos = uniform(rng, -0.5, 0.5);
    const std::vector<double> negs{uniform(rng, -0.5, 0.5), uniform(rng, -0.5, 0.5)};
    EXPECT_NEAR(anchor_zero_term(c * pos, {c * negs[0], c * negs[1]}, c * tau),
                anchor_zero_term(pos, negs, tau), 1e-12);
  }
}

struct LfcBatch {
  Tensor emb;
  std::vector<int> labels;
  std::vector<std::size_t> positives;
};

LfcBatch random_batch(Rng& rng, std::size_t domains, std::size_t per, std::size_t dim) {
  LfcBatch b{random_tensor({domains * per, dim}, rng), {}, {}};
  for (std::size_t d = 0; d < domains; ++d)
    for (std::size_t m = 0; m < per; ++m) {
      b.labels.push_back(static_cast<int>(d));
      b.positives.push_back(d * per + (m + 1 + uniform_index(rng, per - 1)) % per);
    }
  return b;
}

TEST(LfcTest, MeanOverAnchorsMatchesBruteForce) {
  Rng rng(6);
  for (int trial = 0; trial < 20; ++trial) {
    const LfcBatch b = random_batch(rng, 3, 3, 5);
    const std::size_t n = b.labels.size();
    auto cos = [&](std::size_t i, std::size_t j) {
      double d = 0, ni = 0, nj = 0;
      for (std::size_t k = 0; k < 5; ++k) {
        d += b.emb.at(i, k) * b.emb.at(j, k);
        ni += b.emb.at(i, k) * b.emb.at(i, k);
        nj += b.emb.at(j, k) * b.emb.at(j, k);
      }
      return d / (std::sqrt(ni) * std::sqrt(nj));
    };
    double expect = 0;
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<double> negs;
      for (std::size_t j = 0; j < n; ++j)
        if (b.labels[j] != b.labels[i]) negs.push_back(cos(i, j));
      expect += ref_anchor(cos(i, b.positives[i]), negs, 0.1) / static_cast<double>(n);
    }
    EXPECT_NEAR(eval(lfc_loss(ad::constant(b.emb), b.labels, b.positives, {0.1})), expect, 1e-9);
  }
}

TEST(LfcTest, InvariantToCommonRescaling) {
  Rng rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    const LfcBatch b = random_batch(rng, 2, 4, 6);
    Tensor scaled = b.emb;
    for (auto& v : scaled.storage()) v *= 4.0;  // power of two: exact in floating point
    EXPECT_EQ(eval(lfc_loss(ad::constant(scaled), b.labels, b.positives, {0.1})),
              eval(lfc_loss(ad::constant(b.emb), b.labels, b.positives, {0.1})));
    Tensor odd = b.emb;
    for (auto& v : odd.storage()) v *= 2.7;  // differs only by rounding
    EXPECT_NEAR(eval(lfc_loss(ad::constant(odd), b.labels, b.positives, {0.1})),
                eval(lfc_loss(ad::constant(b.emb), b.labels, b.positives, {0.1})), 1e-13);
  }
}

TEST(LfcTest, PermutationInvariant) {
  Rng rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    const LfcBatch b = random_batch(rng, 2, 3, 4);
    const std::size_t n = b.labels.size();
    std::vector<std::size_t> perm(n);
    for (std::size_t i = 0; i < n; ++i) perm[i] = i;
    perm = choose_k(perm, n, rng);
    std::vector<std::size_t> inv(n);
    for (std::size_t i = 0; i < n; ++i) inv[perm[i]] = i;
    LfcBatch p{Tensor({n, 4}), std::vector<int>(n), std::vector<std::size_t>(n)};
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t k = 0; k < 4; ++k) p.emb.at(i, k) = b.emb.at(perm[i], k);
      p.labels[i] = b.labels[perm[i]];
      p.positives[i] = inv[b.positives[perm[i]]];
    }
    EXPECT_NEAR(eval(lfc_loss(ad::constant(p.emb), p.labels, p.positives, {0.1})),
                eval(lfc_loss(ad::constant(b.emb), b.labels, b.positives, {0.1})), 1e-13);
  }
}

TEST(LfcTest, GradientMatchesFiniteDifferences) {
  Rng rng(9);
  for (int trial = 0; trial < 100; ++trial) {
    const LfcBatch b = random_batch(rng, 2, 2 + trial % 3, 5);
    ad::Var x = ad::parameter(b.emb);
    auto build = [&] { return lfc_loss(x, b.labels, b.positives, {0.5, trial % 2 == 1}); };
    EXPECT_LT(check_gradient(build, x), 1e-4);
  }
}

TEST(LfcTest, Errors) {
  const Tensor emb = Tensor::identity(4);
  const std::vector<std::size_t> pos{1, 0, 3, 2};
  EXPECT_THROW(lfc_loss(ad::constant(emb), std::vector<int>{0, 0, 0, 0}, pos, {0.1}),
               DomainError);
  EXPECT_THROW(lfc_loss(ad::constant(emb), std::vector<int>{0, 0, 1, 2},
                        std::vector<std::size_t>{1, 0, 3, 2}, {0.1}),
               DomainError);
  EXPECT_THROW(lfc_loss(ad::constant(emb), std::vector<int>{0, 0, 1, 1}, pos, {0.0}),
               DomainError);
  EXPECT_THROW(lfc_loss(ad::constant(emb), std::vector<int>{0, 0, 1, 1},
                        std::vector<std::size_t>{0, 0, 3, 2}, {0.1}),
               DomainError);
  EXPECT_THROW(lfc_loss(ad::constant(emb), std::vector<int>{0, 0, 1, 1},
                        std::vector<std::size_t>{2, 0, 3, 2}, {0.1}),
               DomainError);
}

std::vector<std::vector<std::size_t>> pools_of(std::size_t domains, std::size_t per) {
  std::vector<std::vector<std::size_t>> pools(domains);
  for (std::size_t d = 0; d < domains; ++d)
    for (std::size_t i = 0; i < per; ++i) pools[d].push_back(d * 1000 + i);
  return pools;
}

TEST(SampleBatchTest, ShapeAndPairs) {
  const auto pools = pools_of(2, 10);
  const std::vector<int> ids{3, 7};
  const BatchPlan plan = sample_batch(pools, ids, 2, 2, 11);
  EXPECT_EQ(plan.size(), 4u);
  EXPECT_EQ(plan.flat_labels(), (std::vector<int>{3, 3, 7, 7}));
  EXPECT_EQ(plan.positives, (std::vector<std::size_t>{1, 0, 3, 2}));
  EXPECT_EQ(sample_batch(pools, ids, 2, 2, 11).flat_samples(), plan.flat_samples());
}

TEST(SampleBatchTest, EveryAnchorHasPositiveAndNegatives) {
  const auto pools = pools_of(4, 8);
  const std::vector<int> ids{0, 1, 2, 3};
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    const BatchPlan plan = sample_batch(pools, ids, 3, 4, seed);
    const auto labels = plan.flat_labels();
    const auto flat = plan.flat_samples();
    ASSERT_EQ(labels.size(), 12u);
    for (std::size_t i = 0; i < labels.size(); ++i) {
      EXPECT_NE(plan.positives[i], i);
      EXPECT_EQ(labels[plan.positives[i]], labels[i]);
      std::size_t negs = 0;
      for (int l : labels) negs += l != labels[i];
      EXPECT_GE(negs, 8u);
      EXPECT_EQ(flat[i] / 1000, static_cast<std::size_t>(labels[i]));
    }
    for (const auto& s : plan.samples) {
      auto sorted = s;
      std::sort(sorted.begin(), sorted.end());
      EXPECT_EQ(std::adjacent_find(sorted.begin(), sorted.end()), sorted.end());
    }
  }
}

TEST(SampleBatchTest, SelectionFrequencyNearUniform) {
  const std::size_t per = 20, s = 4, draws = 1000;
  const auto pools = pools_of(2, per);
  const std::vector<int> ids{0, 1};
  std::map<std::size_t, double> hits;
  for (std::uint64_t seed = 0; seed < draws; ++seed)
    for (std::size_t idx : sample_batch(pools, ids, 2, s, seed).flat_samples()) hits[idx] += 1;
  const double p = static_cast<double>(s) / per;
  const double mean = draws * p, sigma = std::sqrt(draws * p * (1 - p));
  for (const auto& pool : pools)
    for (std::size_t idx : pool) EXPECT_LE(std::abs(hits[idx] - mean), 3 * sigma) << idx;
}

TEST(SampleBatchTest, Errors) {
  const auto pools = pools_of(2, 3);
  const std::vector<int> ids{0, 1};
  EXPECT_THROW(sample_batch(pools, ids, 2, 4, 0), DomainError);
  EXPECT_THROW(sample_batch(pools, ids, 3, 2, 0), DomainError);
  EXPECT_THROW(sample_batch(pools, ids, 2, 1, 0), DomainError);
  EXPECT_THROW(sample_batch(pools, ids, 1, 2, 0), DomainError);
}

TEST(LossCsvTest, RoundTripPrecision) {
  const LossReport r{0.1, 0.2, 1.0 / 3.0, -0.5, 0.1 + -0.5};
  const std::string row = loss_csv_row(7, r);
  EXPECT_EQ(row.substr(0, 2), "7,");
  EXPECT_NE(row.find("0.33333333333333331"), std::string::npos);
  EXPECT_EQ(loss_csv_header(), "step,seg,dice,ce,lfc,total");
}

}  // namespace
}  // namespace apex
