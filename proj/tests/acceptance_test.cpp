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

// Acceptance gate: one PASS/FAIL line per criterion. The desk-scale
// experiments run the default configuration on the default benchmark with
// three seeds. argv[1] is the path of the `apex` CLI, used for the
// reproducibility check.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <map>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "apex/errors.hpp"
#include "apex/gradcheck.hpp"
#include "apex/harness.hpp"
#include "support/gradient_cases.hpp"
#include "support/spectral_oracles.hpp"

namespace fs = std::filesystem;
using namespace apex;
using testing::random_image;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

int failures = 0;

void report(int id, const char* title, bool pass, const std::string& detail) {
  std::printf("%s  criterion %2d: %s | %s\n", pass ? "PASS" : "FAIL", id, title, detail.c_str());
  std::fflush(stdout);
  if (!pass) ++failures;
}

std::string format(const char* fmt, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, fmt, args...);
  return buf;
}

// 1 ------------------------------------------------------------------------
void numeric_core() {
  const auto t0 = Clock::now();
  double worst = 0;
  std::string worst_op;
  std::size_t ops = 0;
  for (const auto& c : testing::gradient_cases()) {
    const double e = testing::worst_case_error(c, 100, 1000 + ops++);
    if (e > worst) {
      worst = e;
      worst_op = c.name;
    }
  }
  const double t = seconds_since(t0);
  report(1, "autodiff gradients vs central differences", worst < 1e-4 && t < 60,
         format("%zu ops x 100 cases, worst rel err %.2e (%s), %.1f s", ops, worst,
                worst_op.c_str(), t));
}

// 2 ------------------------------------------------------------------------
void spectral() {
  const auto t0 = Clock::now();
  Rng rng(2);
  double dft_err = 0, roundtrip = 0, parseval = 0, phase = 0, high = 0, imag = 0;
  for (std::size_t n : {8u, 16u})
    for (int trial = 0; trial < 5; ++trial) {
      const Image img = random_image(n, n, 1, rng);
      const Spectrum s = fft2(img);
      const auto ref = testing::naive_centered_dft(img);
      for (std::size_t i = 0; i < ref.size(); ++i)
        dft_err = std::max(dft_err, std::abs(s.coefficient(i) - ref[i]));
      roundtrip = std::max(roundtrip, max_abs_diff(ifft2(s), img));
      double e = 0, f = 0;
      for (double v : img.values()) e += v * v;
      for (double a : s.amplitude.data()) f += a * a;
      parseval = std::max(parseval, std::abs(e - f / static_cast<double>(n * n)) / e);

      const RegionLayout layout = low_freq_layout(n, n, 1, 0.25);
      const PromptMultiplier p = testing::random_symmetric_prompt(layout, rng);
      const Spectrum applied = apply_prompt(s, p);
      const Tensor mask = layout.mask();
      for (std::size_t i = 0; i < s.amplitude.size(); ++i) {
        phase = std::max(phase, std::abs(applied.phase[i] - s.phase[i]));
        if (mask[i] == 0.0) high = std::max(high, std::abs(applied.amplitude[i] - s.amplitude[i]));
      }
      imag = std::max(imag, ifft2_with_residual(applied).max_imag_residual);
    }
  const double t = seconds_since(t0);
  const bool pass = dft_err < 1e-9 && roundtrip < 1e-9 && parseval < 1e-9 && phase == 0.0 &&
                    high == 0.0 && imag < 1e-9 && t < 60;
  report(2, "spectral transform and prompting invariants", pass,
         format("dft err %.1e, roundtrip %.1e, parseval %.1e, phase %.1e, high-freq %.1e, "
                "imag %.1e, %.1f s",
                dft_err, roundtrip, parseval, phase, high, imag, t));
}

// 3 ------------------------------------------------------------------------
void addressing() {
  std::vector<std::string> bad;
  auto check = [&](bool ok, const char* what) {
    if (!ok) bad.push_back(what);
  };
  auto cos = [](std::initializer_list<double> u, std::initializer_list<double> v) {
    return ad::cosine_similarity(ad::constant(Tensor::vector(u)), ad::constant(Tensor::vector(v)))
        .value()
        .item();
  };
  const double r = 1 / std::sqrt(2.0);
  check(cos({1, 0}, {1, 0}) == 1.0, "parallel cosine");
  check(cos({1, 0}, {0, 1}) == 0.0, "orthogonal cosine");
  check(std::abs(cos({1, 0}, {r, r}) - r) < 1e-15, "diagonal cosine");

  const ad::Var b2 = ad::constant(Tensor::matrix({{r, r}, {0, 1}}));
  const Tensor a2 = address(b2, ad::constant(Tensor::matrix({{1, 0}}))).value();
  check(std::abs(a2[0] - r) < 1e-15 && a2[1] == 0.0, "two-slot addressing example");

  const ApexState s = init_apex(ApexConfig{}, 32, 32, 1);
  const Tensor& b = s.memory.value();
  const std::size_t j = b.dim(0), k = b.dim(1);
  Tensor z1({1, k});
  for (std::size_t c = 0; c < k; ++c) z1[c] = b.at(0, c);
  const Tensor a1 = address(s.memory, ad::constant(z1)).value();
  bool one_hot = std::abs(a1[0] - 1.0) < 1e-12;
  for (std::size_t i = 1; i < j; ++i) one_hot = one_hot && std::abs(a1[i]) < 1e-12;
  check(one_hot, "self-similarity one-hot");

  Rng rng(3);
  bool range = true, scale = true;
  for (int trial = 0; trial < 100; ++trial) {
    const Tensor z = testing::random_tensor({1, k}, rng, uniform(rng, 1e-3, 1e3));
    Tensor z4 = z;
    for (auto& v : z4.storage()) v *= 4.0;
    const Tensor a = address(s.memory, ad::constant(z)).value();
    const Tensor a4 = address(s.memory, ad::constant(z4)).value();
    for (std::size_t i = 0; i < j; ++i) {
      range = range && a[i] >= -1.0 && a[i] <= 1.0;
      scale = scale && a[i] == a4[i];
    }
  }
  check(range, "range [-1, 1]");
  check(scale, "exact scale invariance");

  Tensor onehot({1, j});
  onehot[7] = 1.0;
  const Tensor picked = retrieve(s.memory, ad::constant(onehot)).value();
  bool row7 = true;
  for (std::size_t c = 0; c < k; ++c) row7 = row7 && picked[c] == b.at(7, c);
  check(row7, "one-hot retrieval");
  const Tensor none = retrieve(s.memory, ad::constant(Tensor({1, j}))).value();
  check(max_abs_diff(none, Tensor({1, k})) == 0.0, "zero retrieval");
  const Tensor mix = retrieve(ad::constant(Tensor::identity(2)),
                              ad::constant(Tensor::matrix({{0.5, 0.5}})))
                         .value();
  check(mix[0] == 0.5 && mix[1] == 0.5, "two-slot mixture");

  std::string detail = "cosine examples, one-hot/zero/mixture retrieval, range, x4 scale";
  for (const auto& w : bad) detail += "; failed: " + w;
  report(3, "addressing and retrieval semantics", bad.empty(), detail);
}

// 4 ------------------------------------------------------------------------
void memory_rule() {
  ApexConfig c;
  c.feature_dim = 8;
  c.slots = 6;
  c.encoder_hidden = {12, 12, 12};
  c.decoder_hidden = {6, 6, 6};
  c.beta = 0.5;
  Rng rng(4);
  double worst = 0, gap = 0;
  for (int trial = 0; trial < 20; ++trial) {
    c.seed = static_cast<std::uint64_t>(trial);
    ApexState s = init_apex(c, 8, 8, 1, false);
    for (auto& v : s.decoder.layers.back().weight.mutable_value().storage()) v = normal(rng, 0, 0.3);
    std::vector<Spectrum> spectra;
    std::vector<const Spectrum*> ptrs;
    Tensor inputs({3, s.layout.size()});
    for (std::size_t i = 0; i < 3; ++i) spectra.push_back(fft2(random_image(8, 8, 1, rng)));
    for (std::size_t i = 0; i < 3; ++i) {
      ptrs.push_back(&spectra[i]);
      const Tensor in = encoder_input(spectra[i], s.layout);
      for (std::size_t e = 0; e < in.size(); ++e) inputs.at(i, e) = in[e];
    }
    const Tensor w = testing::random_tensor({3, 64}, rng);
    auto functional = [&](const ApexState& st) {
      const ApexGraph g = apex_graph(st, ptrs, ad::constant(inputs), st.memory, false);
      return std::make_pair(g, ad::sum(ad::mul(ad::reshape(g.images, w.shape()), ad::constant(w))));
    };
    auto [g, loss] = functional(s);
    s.memory.zero_grad();
    ad::backward(loss);
    const Tensor explicit_grad = memory_gradient(g.a.value(), g.z_prime.grad());
    worst = std::max(worst, max_abs_diff(explicit_grad, s.memory.grad()));

    ApexState full = s;
    full.config.full_graph_memory = true;
    full.memory.zero_grad();
    ad::backward(functional(full).second);
    gap = std::max(gap, max_abs_diff(full.memory.grad(), explicit_grad));
  }
  report(4, "explicit memory gradient", worst < 1e-10 && gap > 1e-6,
         format("max |explicit - barrier autodiff| %.1e; max gap to full graph %.2e", worst, gap));
}

// 5 ------------------------------------------------------------------------
double anchor_term(double pos, const std::vector<double>& negs, double tau) {
  const std::size_t n = 2 + negs.size();
  Tensor s({n, n});
  s.at(0, 1) = pos;
  for (std::size_t j = 0; j < negs.size(); ++j) s.at(0, 2 + j) = negs[j];
  std::vector<int> labels(n, 1);
  labels[0] = labels[1] = 0;
  const std::vector<std::size_t> anchors{0}, positives{1};
  return lfc_anchor_terms(ad::constant(s), labels, anchors, positives, {tau, false}).value()[0];
}

void contrastive() {
  const double e1 = anchor_term(1.0, {0.0}, 1.0);
  double e2 = 0;
  for (double s : {-0.7, 0.0, 0.3, 1.0}) e2 = std::max(e2, std::abs(anchor_term(s, {s}, 0.2)));
  const double brute = -std::log(std::exp(1.6) / (std::exp(0.4) + std::exp(-0.8)));
  const double e3 = anchor_term(0.8, {0.2, -0.4}, 0.5);
  const bool examples = std::abs(e1 + 1.0) < 1e-10 && e2 < 1e-10 && std::abs(e3 - brute) < 1e-10;

  Rng rng(5);
  bool monotone = true;
  for (int trial = 0; trial < 100; ++trial) {
    const double tau = uniform(rng, 0.05, 1.0), pos = uniform(rng, -1, 0.9);
    std::vector<double> negs(3);
    for (auto& v : negs) v = uniform(rng, -1, 0.9);
    const double base = anchor_term(pos, negs, tau);
    auto bumped = negs;
    bumped[trial % 3] += 0.05;
    monotone = monotone && anchor_term(pos + 0.05, negs, tau) < base &&
               anchor_term(pos, bumped, tau) > base;
  }

  double grad = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t s = 2 + trial % 3;
    std::vector<int> labels;
    std::vector<std::size_t> positives;
    for (int d = 0; d < 2; ++d)
      for (std::size_t m = 0; m < s; ++m) {
        labels.push_back(d);
        positives.push_back(d * s + (m + 1) % s);
      }
    ad::Var x = ad::parameter(testing::random_tensor({2 * s, 5}, rng));
    auto build = [&] { return lfc_loss(x, labels, positives, {0.5, trial % 2 == 1}); };
    grad = std::max(grad, check_gradient(build, x));
  }
  report(5, "contrastive loss semantics", examples && monotone && grad < 1e-4,
         format("examples err %.1e / %.1e / %.1e, monotone %s, worst grad rel err %.1e",
                std::abs(e1 + 1.0), e2, std::abs(e3 - brute), monotone ? "yes" : "no", grad));
}

// Desk-scale experiments ----------------------------------------------------
struct Desk {
  TrainConfig config;
  Benchmark bench;
  FrozenBackbone bb;
  MetricReport source_only;
  std::vector<TrainResult> runs;
  std::vector<MetricReport> reports;
  double train_seconds = 0;
};

// 6 ------------------------------------------------------------------------
void identity_and_frozen(const Desk& d, const MetricReport& source_after, std::uint64_t bb_hash) {
  Rng rng(6);
  double worst = 0;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    ApexConfig c = d.config.apex;
    c.seed = seed;
    const ApexState s = init_apex(c, 32, 32, 1);
    for (int i = 0; i < 5; ++i) {
      const Image img = random_image(32, 32, 1, rng);
      worst = std::max(worst, max_abs_diff(apex_forward(s, img).image, img));
    }
  }
  bool same = d.source_only.domains.size() == source_after.domains.size();
  for (std::size_t i = 0; same && i < source_after.domains.size(); ++i)
    same = d.source_only.domains[i].dice == source_after.domains[i].dice &&
           d.source_only.domains[i].iou == source_after.domains[i].iou;
  const bool frozen = d.bb.hash() == bb_hash;
  report(6, "identity at init and frozen backbone", worst < 1e-9 && same && frozen,
         format("max |prompted - input| at init %.1e; source-only bit-identical %s; backbone "
                "hash unchanged %s",
                worst, same ? "yes" : "no", frozen ? "yes" : "no"));
}

// 7 ------------------------------------------------------------------------
void adaptation(const Desk& d) {
  std::vector<DomainSample> src = d.bench.source_test;
  const double source_dice = 100.0 * backbone_mean_dice(d.bb, src);
  const double shifted = d.source_only.total_dice();
  double seen = 0, unseen = 0;
  bool loss_down = true;
  for (std::size_t i = 0; i < d.runs.size(); ++i) {
    seen += d.reports[i].mean_dice(true) / static_cast<double>(d.runs.size());
    unseen += d.reports[i].mean_dice(false) / static_cast<double>(d.runs.size());
    const auto& log = d.runs[i].log;
    const std::size_t q = std::max<std::size_t>(1, log.size() / 10);
    double head = 0, tail = 0;
    for (std::size_t k = 0; k < q; ++k) {
      head += log[k].total;
      tail += log[log.size() - 1 - k].total;
    }
    loss_down = loss_down && tail < head;
  }
  const double seen0 = d.source_only.mean_dice(true), unseen0 = d.source_only.mean_dice(false);
  const bool pass = source_dice - shifted >= 10.0 && seen - seen0 >= 5.0 && unseen >= unseen0 &&
                    loss_down && d.train_seconds < 900;
  report(7, "desk-scale adaptation", pass,
         format("source %.2f vs shifted %.2f; seen %.2f -> %.2f; unseen %.2f -> %.2f; total "
                "loss falls %s; 3-seed training %.0f s",
                source_dice, shifted, seen0, seen, unseen0, unseen, loss_down ? "yes" : "no",
                d.train_seconds));
}

// 8 ------------------------------------------------------------------------
void ablation(const Desk& d) {
  const auto t0 = Clock::now();
  const auto rows = run_ablation(d.config, d.bench, d.bb);
  std::map<std::pair<bool, bool>, double> total;
  std::map<std::pair<bool, bool>, int> n;
  for (const auto& r : rows) {
    total[{r.memory, r.lfc}] += r.report.total_dice();
    ++n[{r.memory, r.lfc}];
  }
  for (auto& [key, v] : total) v /= n[key];
  const double full = total[{true, true}], no_mem = total[{false, true}],
               no_lfc = total[{true, false}], neither = total[{false, false}];
  report(8, "ablation directions", full > no_mem && full > no_lfc,
         format("total Dice: full %.2f, memory-off %.2f, lfc-off %.2f, both off %.2f (%.0f s)",
                full, no_mem, no_lfc, neither, seconds_since(t0)));
}

// 9 ------------------------------------------------------------------------
void slot_saturation(const Desk& d) {
  const auto t0 = Clock::now();
  const auto rows = slot_sweep(d.config, d.bench, d.bb, d.config.slot_list);
  std::map<std::size_t, double> mean;
  std::map<std::size_t, int> n;
  for (const auto& r : rows) {
    mean[r.slots] += r.report.total_dice();
    ++n[r.slots];
  }
  std::string curve;
  for (auto& [j, v] : mean) {
    v /= n[j];
    curve += format("%zu:%.2f ", j, v);
  }
  const double early = mean[25] - mean[1];
  const double late = std::abs(mean[150] - mean[300]);
  report(9, "slot-count saturation", late < early,
         format("|D150 - D300| %.2f < D25 - D1 %.2f; D5 - D1 %.2f; curve %s(%.0f s)", late,
                early, mean[5] - mean[1], curve.c_str(), seconds_since(t0)));
}

// 10 -----------------------------------------------------------------------
void slot_overlap(const Desk& d) {
  std::vector<DomainSample> all = d.bench.test_seen;
  all.insert(all.end(), d.bench.test_unseen.begin(), d.bench.test_unseen.end());
  int wins = 0;
  std::string detail;
  for (std::size_t i = 0; i < d.runs.size(); ++i) {
    const ActivationReport r = export_activations(d.runs[i].state, all, d.config.top_fraction);
    wins += r.within > r.across;
    detail += format("seed %zu %.3f vs %.3f; ", i, r.within, r.across);
  }
  report(10, "within-domain top-slot overlap exceeds cross-domain", wins == 3,
         detail + format("%d/3 seeds", wins));
}

// 11 -----------------------------------------------------------------------
std::map<std::string, std::string> snapshot(const fs::path& dir) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    std::ifstream in(e.path(), std::ios::binary);
    files[fs::relative(e.path(), dir).string()] = {std::istreambuf_iterator<char>(in), {}};
  }
  return files;
}

void reproducibility(const std::string& cli) {
  const fs::path root = fs::temp_directory_path() / "apex_acceptance_cli";
  fs::remove_all(root);
  fs::create_directories(root);
  {
    std::ofstream cfg(root / "small.cfg");
    cfg << "epochs = 2\ntrain_per_domain = 16\ntest_per_domain = 6\nseeds = 0,1\n"
           "slot_list = 1,5\n";
  }
  bool ok = true;
  for (const char* run : {"a", "b"}) {
    const fs::path d = root / run;
    fs::create_directories(d);
    const std::string c = "\"" + cli + "\"", cfg = (root / "small.cfg").string(),
                      out = d.string();
    const std::vector<std::string> cmds{
        c + " gen-bench --config " + cfg + " --seed 5 --out " + out + "/bench",
        c + " train --config " + cfg + " --bench " + out + "/bench --out " + out + "/train",
        c + " eval --ckpt " + out + "/train/seed0.apxt --bench " + out +
            "/bench --split unseen --out " + out + "/eval.csv",
        c + " ablate --config " + cfg + " --bench " + out + "/bench --out " + out + "/ablate",
        c + " sweep-slots --config " + cfg + " --bench " + out + "/bench --j-list 1,5 --out " +
            out + "/sweep",
        c + " viz-mem --ckpt " + out + "/train/seed0.apxt --bench " + out + "/bench --out " +
            out + "/viz"};
    for (const auto& cmd : cmds) ok = ok && std::system((cmd + " > /dev/null").c_str()) == 0;
  }
  std::size_t count = 0;
  bool same = false;
  if (ok) {
    const auto a = snapshot(root / "a"), b = snapshot(root / "b");
    count = a.size();
    same = a == b;
  }
  report(11, "CLI reruns are byte-identical", ok && same && count > 0,
         format("6 subcommands run twice, %zu files compared, commands ok %s, identical %s",
                count, ok ? "yes" : "no", same ? "yes" : "no"));
  fs::remove_all(root);
}

}  // namespace

int main(int argc, char** argv) {
  if (argc < 2) {
    std::fprintf(stderr, "usage: acceptance_test <path-to-apex-cli>\n");
    return 2;
  }
  try {
    numeric_core();
    spectral();
    addressing();
    memory_rule();
    contrastive();

    Desk d;
    d.bench = build_benchmark(benchmark_config(d.config), d.config.bench_seed);
    d.bb = backbone_calibrate(d.bench.source_train);
    const std::uint64_t bb_hash = d.bb.hash();
    d.source_only = evaluate_benchmark(nullptr, d.bb, d.bench);
    const auto t0 = Clock::now();
    for (std::uint64_t seed : d.config.seeds) d.runs.push_back(train(d.config, d.bench, d.bb, seed));
    d.train_seconds = seconds_since(t0);
    for (const auto& r : d.runs) d.reports.push_back(evaluate_benchmark(&r.state, d.bb, d.bench));
    identity_and_frozen(d, evaluate_benchmark(nullptr, d.bb, d.bench), bb_hash);
    adaptation(d);
    ablation(d);
    slot_saturation(d);
    slot_overlap(d);
    reproducibility(argv[1]);
  } catch (const std::exception& e) {
    std::printf("FAIL  aborted: %s\n", e.what());
    return 1;
  }
  std::printf("%d criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
