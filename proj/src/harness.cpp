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

#include "apex/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "apex/errors.hpp"
#include "apex/image_io.hpp"
#include "apex/init.hpp"
#include "apex/optim.hpp"

namespace apex {

namespace {

constexpr std::uint64_t kBatchStream = 0x5eed0000;

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

std::vector<std::string> train_keys() {
  return {"epochs",         "domains_per_batch", "samples_per_domain",
          "optimizer",      "adam_lr",           "use_lfc",
          "lfc_positive_in_denominator",         "seeds",
          "bench_seed",     "train_per_domain",  "test_per_domain",
          "slot_list",      "top_fraction"};
}

double mean_of(const std::vector<double>& v) {
  if (v.empty()) return NAN;
  double s = 0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double std_of(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double s = 0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

double hard_iou(std::span<const double> pred, std::span<const double> mask) {
  double inter = 0, uni = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool p = pred[i] > 0.5, g = mask[i] > 0.5;
    inter += p && g;
    uni += p || g;
  }
  return uni == 0 ? 1.0 : inter / uni;
}

Tensor gather(const Tensor& rows, std::span<const std::size_t> idx) {
  const std::size_t w = rows.dim(1);
  Tensor out({idx.size(), w});
  for (std::size_t i = 0; i < idx.size(); ++i)
    std::copy_n(rows.data().begin() + static_cast<std::ptrdiff_t>(idx[i] * w), w,
                out.data().begin() + static_cast<std::ptrdiff_t>(i * w));
  return out;
}

}  // namespace

void TrainConfig::validate() const {
  apex.validate();
  if (domains_per_batch < 2 || samples_per_domain < 2)
    throw DomainError("train config: need at least 2 domains and 2 samples per batch");
  if (seeds.empty()) throw DomainError("train config: seeds must be nonempty");
  if (!(adam_lr > 0.0)) throw DomainError("train config: adam_lr must be positive");
  if (train_per_domain < samples_per_domain || test_per_domain == 0)
    throw DomainError("train config: too few samples per domain");
  if (!(top_fraction > 0.0 && top_fraction <= 1.0))
    throw DomainError("train config: top_fraction must lie in (0, 1]");
}

KeyValues TrainConfig::to_kv() const {
  KeyValues kv;
  apex.to_kv(kv);
  kv.set("epochs", static_cast<long long>(epochs));
  kv.set("domains_per_batch", static_cast<long long>(domains_per_batch));
  kv.set("samples_per_domain", static_cast<long long>(samples_per_domain));
  kv.set("optimizer", std::string(optimizer == Optimizer::kSgd ? "sgd" : "adam"));
  kv.set("adam_lr", adam_lr);
  kv.set("use_lfc", use_lfc);
  kv.set("lfc_positive_in_denominator", lfc_positive_in_denominator);
  std::string s;
  for (std::size_t i = 0; i < seeds.size(); ++i) s += (i ? "," : "") + std::to_string(seeds[i]);
  kv.set("seeds", s);
  kv.set("bench_seed", std::to_string(bench_seed));
  kv.set("train_per_domain", static_cast<long long>(train_per_domain));
  kv.set("test_per_domain", static_cast<long long>(test_per_domain));
  kv.set("slot_list", join_sizes(slot_list));
  kv.set("top_fraction", top_fraction);
  return kv;
}

TrainConfig TrainConfig::from_kv(const KeyValues& kv) {
  KeyValues apex_keys;
  ApexConfig{}.to_kv(apex_keys);
  std::set<std::string> known;
  for (const auto& [k, v] : apex_keys.entries()) known.insert(k);
  for (const auto& k : train_keys()) known.insert(k);
  for (const auto& [k, v] : kv.entries())
    if (!known.count(k)) throw FormatError("config: unknown key " + k);

  TrainConfig c;
  c.apex = ApexConfig::from_kv(kv);
  auto size = [&](const char* key, std::size_t& out) {
    if (!kv.has(key)) return;
    const long long v = kv.get_int(key);
    if (v < 0) throw FormatError(std::string("config: ") + key + " must be non-negative");
    out = static_cast<std::size_t>(v);
  };
  size("epochs", c.epochs);
  size("domains_per_batch", c.domains_per_batch);
  size("samples_per_domain", c.samples_per_domain);
  size("train_per_domain", c.train_per_domain);
  size("test_per_domain", c.test_per_domain);
  if (kv.has("optimizer")) {
    const std::string o = kv.get_string("optimizer");
    if (o == "sgd") c.optimizer = Optimizer::kSgd;
    else if (o == "adam") c.optimizer = Optimizer::kAdam;
    else throw FormatError("config: optimizer must be sgd or adam");
  }
  if (kv.has("adam_lr")) c.adam_lr = kv.get_double("adam_lr");
  if (kv.has("use_lfc")) c.use_lfc = kv.get_bool("use_lfc");
  if (kv.has("lfc_positive_in_denominator"))
    c.lfc_positive_in_denominator = kv.get_bool("lfc_positive_in_denominator");
  if (kv.has("seeds")) {
    c.seeds.clear();
    for (std::size_t s : kv.get_sizes("seeds")) c.seeds.push_back(s);
  }
  if (kv.has("bench_seed")) c.bench_seed = kv.get_u64("bench_seed");
  if (kv.has("slot_list")) c.slot_list = kv.get_sizes("slot_list");
  if (kv.has("top_fraction")) c.top_fraction = kv.get_double("top_fraction");
  c.validate();
  return c;
}

BenchmarkConfig benchmark_config(const TrainConfig& tc) {
  BenchmarkConfig b = default_benchmark_config();
  b.train_per_domain = tc.train_per_domain;
  b.test_per_domain = tc.test_per_domain;
  return b;
}

PreparedSet prepare_set(std::span<const DomainSample> samples, const RegionLayout& layout) {
  PreparedSet p;
  const std::size_t n = samples.size(), l = layout.size();
  const std::size_t plane = layout.height * layout.width;
  p.spectra.resize(n);
  p.inputs = Tensor({n, l});
  p.masks = Tensor({n, plane});
  for (std::size_t i = 0; i < n; ++i) {
    const DomainSample& s = samples[i];
    if (s.image.height() != layout.height || s.image.width() != layout.width ||
        s.image.channels() != layout.channels)
      throw ShapeError("prepare_set: sample geometry differs from the prompt layout");
    p.samples.push_back(&s);
    p.spectra[i] = fft2(s.image);
    const Tensor in = encoder_input(p.spectra[i], layout);
    std::copy(in.data().begin(), in.data().end(),
              p.inputs.data().begin() + static_cast<std::ptrdiff_t>(i * l));
    std::copy(s.mask.data().begin(), s.mask.data().end(),
              p.masks.data().begin() + static_cast<std::ptrdiff_t>(i * plane));
  }
  return p;
}

TrainResult train(const TrainConfig& config, const Benchmark& bench, const FrozenBackbone& bb,
                  std::uint64_t seed) {
  config.validate();
  const auto& samples = bench.train_seen;
  if (samples.empty()) throw DomainError("train: no training samples");
  const Image& first = samples.front().image;
  if (first.channels() != 1) throw ShapeError("train: the backbone takes single-channel images");
  const std::size_t h = first.height(), w = first.width();

  ApexConfig ac = config.apex;
  ac.seed = seed;
  TrainResult result{init_apex(ac, h, w, 1), {}};
  ApexState& state = result.state;
  PreparedSet data = prepare_set(samples, state.layout);
  fit_input_standardization(state, data.inputs);
  data.inputs = standardize_input(state, data.inputs);

  std::map<int, std::vector<std::size_t>> by_domain;
  for (std::size_t i = 0; i < samples.size(); ++i) by_domain[samples[i].domain_id].push_back(i);
  std::vector<int> ids;
  std::vector<std::vector<std::size_t>> pools;
  for (auto& [id, pool] : by_domain) {
    ids.push_back(id);
    pools.push_back(pool);
  }

  const std::size_t batch = config.domains_per_batch * config.samples_per_domain;
  const std::size_t steps = config.epochs * ((samples.size() + batch - 1) / batch);
  const LfcOptions lfc_opts{ac.tau, config.lfc_positive_in_denominator};
  std::vector<ad::Var> params = state.network_parameters();
  Adam adam(config.adam_lr);

  for (std::size_t step = 0; step < steps; ++step) {
    const BatchPlan plan = sample_batch(pools, ids, config.domains_per_batch,
                                        config.samples_per_domain,
                                        derive_seed(seed, kBatchStream + step));
    const std::vector<std::size_t> idx = plan.flat_samples();
    const std::vector<int> labels = plan.flat_labels();
    std::vector<const Spectrum*> spectra;
    for (std::size_t i : idx) spectra.push_back(&data.spectra[i]);

    // The explicit memory rule needs no graph edge into B at all.
    const bool graph_memory = ac.use_memory && ac.full_graph_memory;
    const ad::Var memory = graph_memory ? state.memory : ad::constant(state.memory.value());
    ApexGraph g;
    try {
      g = apex_graph(state, spectra, ad::constant(gather(data.inputs, idx)), memory,
                     config.use_lfc);
    } catch (const DomainError& e) {
      // Only reachable once the decoder output has overflowed the exponential.
      throw TrainingDivergedError("train: step " + std::to_string(step) + ": " + e.what());
    }
    const ad::Var pred = backbone_forward(bb, g.images, h, w);
    const SegLoss seg = seg_loss(pred, gather(data.masks, idx));
    ad::Var total = seg.total;
    LossReport r;
    if (config.use_lfc) {
      const ad::Var lfc = lfc_loss(g.aux, labels, plan.positives, lfc_opts);
      total = ad::add(seg.total, lfc);
      r.lfc = lfc.value().item();
    }
    r.seg = seg.total.value().item();
    r.dice = seg.dice.value().item();
    r.ce = seg.ce.value().item();
    r.total = total.value().item();
    if (!std::isfinite(r.total))
      throw TrainingDivergedError("train: non-finite loss at step " + std::to_string(step));

    zero_grads(params);
    state.memory.zero_grad();
    ad::backward(total);
    if (config.optimizer == Optimizer::kAdam) {
      adam.step(params);
    } else {
      sgd_step(params, ac.eta);
    }
    if (ac.use_memory) {
      const Tensor grad = graph_memory ? state.memory.grad()
                                       : memory_gradient(g.a.value(), g.z_prime.grad());
      update_memory(state.memory.mutable_value(), grad, ac.eta);
    }
    ++state.step;
    result.log.push_back(r);
  }
  return result;
}

double MetricReport::mean_dice(bool seen) const {
  std::vector<double> v;
  for (const auto& d : domains)
    if (d.seen == seen) v.push_back(d.dice);
  return mean_of(v);
}

double MetricReport::mean_iou(bool seen) const {
  std::vector<double> v;
  for (const auto& d : domains)
    if (d.seen == seen) v.push_back(d.iou);
  return mean_of(v);
}

double MetricReport::total_dice() const {
  std::vector<double> v;
  for (const auto& d : domains) v.push_back(d.dice);
  return mean_of(v);
}

double MetricReport::total_iou() const {
  std::vector<double> v;
  for (const auto& d : domains) v.push_back(d.iou);
  return mean_of(v);
}

MetricReport evaluate(const ApexState* state, const FrozenBackbone& bb,
                      std::span<const DomainSample> samples, std::span<const int> seen_ids) {
  std::map<int, DomainMetric> acc;
  for (const auto& s : samples) {
    const Image img = state ? apex_forward(*state, s.image).image : s.image;
    const Tensor pred = backbone_predict(bb, img);
    DomainMetric& m = acc[s.domain_id];
    m.domain_id = s.domain_id;
    m.seen = std::find(seen_ids.begin(), seen_ids.end(), s.domain_id) != seen_ids.end();
    ++m.count;
    m.dice += 100.0 * hard_dice(pred.data(), s.mask.data());
    m.iou += 100.0 * hard_iou(pred.data(), s.mask.data());
  }
  MetricReport r;
  for (auto& [id, m] : acc) {
    m.dice /= static_cast<double>(m.count);
    m.iou /= static_cast<double>(m.count);
    r.domains.push_back(m);
  }
  return r;
}

MetricReport evaluate_benchmark(const ApexState* state, const FrozenBackbone& bb,
                                const Benchmark& bench) {
  std::vector<DomainSample> all = bench.test_seen;
  all.insert(all.end(), bench.test_unseen.begin(), bench.test_unseen.end());
  std::vector<int> seen;
  for (const auto& s : bench.test_seen) seen.push_back(s.domain_id);
  std::sort(seen.begin(), seen.end());
  seen.erase(std::unique(seen.begin(), seen.end()), seen.end());
  return evaluate(state, bb, all, seen);
}

std::string metric_csv(const MetricReport& r, const std::string& label) {
  std::ostringstream os;
  os << "label,domain,split,count,dice,iou\n";
  for (const auto& d : r.domains)
    os << label << ',' << d.domain_id << ',' << (d.seen ? "seen" : "unseen") << ',' << d.count
       << ',' << fmt(d.dice) << ',' << fmt(d.iou) << '\n';
  bool any_seen = false, any_unseen = false;
  for (const auto& d : r.domains) (d.seen ? any_seen : any_unseen) = true;
  if (any_seen)
    os << label << ",mean,seen,," << fmt(r.mean_dice(true)) << ',' << fmt(r.mean_iou(true)) << '\n';
  if (any_unseen)
    os << label << ",mean,unseen,," << fmt(r.mean_dice(false)) << ',' << fmt(r.mean_iou(false))
       << '\n';
  os << label << ",mean,total,," << fmt(r.total_dice()) << ',' << fmt(r.total_iou()) << '\n';
  return os.str();
}

std::vector<AblationRow> run_ablation(const TrainConfig& config, const Benchmark& bench,
                                      const FrozenBackbone& bb) {
  std::vector<AblationRow> rows;
  for (std::uint64_t seed : config.seeds)
    for (bool memory : {true, false})
      for (bool lfc : {true, false}) {
        TrainConfig c = config;
        c.apex.use_memory = memory;
        c.use_lfc = lfc;
        ApexConfig init_cfg = c.apex;
        init_cfg.seed = seed;
        const std::uint64_t before = tensor_hash(
            orthogonal_rows(init_cfg.slots, init_cfg.feature_dim,
                            derive_seed(seed, 11), init_cfg.allow_block_init));
        const TrainResult t = train(c, bench, bb, seed);
        AblationRow row{seed, memory, lfc, evaluate_benchmark(&t.state, bb, bench), 0.0,
                        t.state.memory_hash() == before};
        const std::size_t tail = std::max<std::size_t>(1, t.log.size() / 10);
        for (std::size_t i = t.log.size() - std::min(tail, t.log.size()); i < t.log.size(); ++i)
          row.final_lfc += t.log[i].lfc / static_cast<double>(tail);
        rows.push_back(std::move(row));
      }
  return rows;
}

std::string ablation_csv(std::span<const AblationRow> rows) {
  std::ostringstream os;
  os << "seed,memory,lfc,seen_dice,unseen_dice,total_dice,seen_iou,unseen_iou,total_iou,final_lfc,"
        "memory_untouched\n";
  std::map<std::pair<bool, bool>, std::vector<const AblationRow*>> cells;
  for (const auto& r : rows) {
    os << r.seed << ',' << r.memory << ',' << r.lfc << ',' << fmt(r.report.mean_dice(true)) << ','
       << fmt(r.report.mean_dice(false)) << ',' << fmt(r.report.total_dice()) << ','
       << fmt(r.report.mean_iou(true)) << ',' << fmt(r.report.mean_iou(false)) << ','
       << fmt(r.report.total_iou()) << ',' << fmt(r.final_lfc) << ',' << r.memory_untouched << '\n';
    cells[{!r.memory, !r.lfc}].push_back(&r);
  }
  for (const char* stat : {"mean", "std"})
    for (const auto& [key, cell] : cells) {
      std::vector<std::vector<double>> cols(7);
      for (const auto* r : cell) {
        const double v[7] = {r->report.mean_dice(true), r->report.mean_dice(false),
                             r->report.total_dice(),    r->report.mean_iou(true),
                             r->report.mean_iou(false), r->report.total_iou(),
                             r->final_lfc};
        for (int i = 0; i < 7; ++i) cols[i].push_back(v[i]);
      }
      os << stat << ',' << !key.first << ',' << !key.second;
      for (const auto& c : cols) os << ',' << fmt(stat[0] == 'm' ? mean_of(c) : std_of(c));
      os << ",\n";
    }
  return os.str();
}

std::vector<SweepRow> slot_sweep(const TrainConfig& config, const Benchmark& bench,
                                 const FrozenBackbone& bb, std::span<const std::size_t> slots) {
  std::vector<SweepRow> rows;
  for (std::size_t j : slots)
    for (std::uint64_t seed : config.seeds) {
      TrainConfig c = config;
      c.apex.slots = j;
      c.apex.allow_block_init = c.apex.allow_block_init || j > c.apex.feature_dim;
      const TrainResult t = train(c, bench, bb, seed);
      rows.push_back({j, seed, evaluate_benchmark(&t.state, bb, bench)});
    }
  return rows;
}

std::string sweep_csv(std::span<const SweepRow> rows) {
  std::ostringstream os;
  os << "slots,seed,seen_dice,unseen_dice,total_dice\n";
  std::map<std::size_t, std::vector<const SweepRow*>> by_j;
  for (const auto& r : rows) {
    os << r.slots << ',' << r.seed << ',' << fmt(r.report.mean_dice(true)) << ','
       << fmt(r.report.mean_dice(false)) << ',' << fmt(r.report.total_dice()) << '\n';
    by_j[r.slots].push_back(&r);
  }
  for (const char* stat : {"mean", "std"})
    for (const auto& [j, cell] : by_j) {
      std::vector<double> s, u, t;
      for (const auto* r : cell) {
        s.push_back(r->report.mean_dice(true));
        u.push_back(r->report.mean_dice(false));
        t.push_back(r->report.total_dice());
      }
      auto f = [&](const std::vector<double>& v) { return fmt(stat[0] == 'm' ? mean_of(v) : std_of(v)); };
      os << j << ',' << stat << ',' << f(s) << ',' << f(u) << ',' << f(t) << '\n';
    }
  return os.str();
}

ActivationReport export_activations(const ApexState& state, std::span<const DomainSample> samples,
                                    double top_fraction) {
  if (!state.config.use_memory) throw DomainError("export_activations: the memory is disabled");
  if (!(top_fraction > 0.0 && top_fraction <= 1.0))
    throw DomainError("export_activations: top_fraction must lie in (0, 1]");
  const std::size_t j = state.config.slots, n = samples.size();
  const std::size_t k = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(top_fraction * static_cast<double>(j))));
  ActivationReport r;
  r.addressing = Tensor({n, j});
  for (std::size_t i = 0; i < n; ++i) {
    const Tensor a = apex_forward(state, samples[i].image).addressing;
    std::copy(a.data().begin(), a.data().end(),
              r.addressing.data().begin() + static_cast<std::ptrdiff_t>(i * j));
    std::vector<std::size_t> order(j);
    for (std::size_t s = 0; s < j; ++s) order[s] = s;
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t x, std::size_t y) { return a[x] > a[y]; });
    order.resize(k);
    std::sort(order.begin(), order.end());
    r.top.push_back(std::move(order));
    r.domain_ids.push_back(samples[i].domain_id);
  }
  std::set<int> distinct(r.domain_ids.begin(), r.domain_ids.end());
  r.domains.assign(distinct.begin(), distinct.end());
  const std::size_t d = r.domains.size();
  std::vector<double> sum(d * d, 0.0), count(d * d, 0.0);
  double within = 0, within_n = 0, across = 0, across_n = 0;
  auto pos = [&](int id) {
    return static_cast<std::size_t>(std::lower_bound(r.domains.begin(), r.domains.end(), id) -
                                    r.domains.begin());
  };
  for (std::size_t x = 0; x < n; ++x)
    for (std::size_t y = x + 1; y < n; ++y) {
      std::vector<std::size_t> common;
      std::set_intersection(r.top[x].begin(), r.top[x].end(), r.top[y].begin(), r.top[y].end(),
                            std::back_inserter(common));
      const double jac = static_cast<double>(common.size()) /
                         static_cast<double>(2 * k - common.size());
      const std::size_t a = pos(r.domain_ids[x]), b = pos(r.domain_ids[y]);
      for (auto [p, q] : {std::pair{a, b}, std::pair{b, a}}) {
        sum[p * d + q] += jac;
        count[p * d + q] += 1;
        if (a == b) break;
      }
      if (a == b) {
        within += jac;
        within_n += 1;
      } else {
        across += jac;
        across_n += 1;
      }
    }
  r.jaccard = Tensor({d, d});
  for (std::size_t i = 0; i < d * d; ++i) r.jaccard[i] = count[i] > 0 ? sum[i] / count[i] : NAN;
  r.within = within_n > 0 ? within / within_n : NAN;
  r.across = across_n > 0 ? across / across_n : NAN;
  return r;
}

std::string activation_csv(const ActivationReport& r) {
  std::ostringstream os;
  os << "sample,domain,top_slots\n";
  for (std::size_t i = 0; i < r.top.size(); ++i) {
    os << i << ',' << r.domain_ids[i] << ',';
    for (std::size_t s = 0; s < r.top[i].size(); ++s) os << (s ? " " : "") << r.top[i][s];
    os << '\n';
  }
  return os.str();
}

void write_activation_files(const ActivationReport& r, const std::filesystem::path& stem) {
  if (stem.has_parent_path()) std::filesystem::create_directories(stem.parent_path());
  {
    std::ofstream out(stem.string() + ".csv", std::ios::binary);
    out << activation_csv(r);
  }
  {
    std::ofstream out(stem.string() + "_jaccard.csv", std::ios::binary);
    out << "domain_a,domain_b,mean_jaccard\n";
    const std::size_t d = r.domains.size();
    for (std::size_t a = 0; a < d; ++a)
      for (std::size_t b = 0; b < d; ++b)
        out << r.domains[a] << ',' << r.domains[b] << ',' << fmt(r.jaccard.at(a, b)) << '\n';
    out << "within,," << fmt(r.within) << "\nacross,," << fmt(r.across) << '\n';
  }
  write_heatmap_pgm(stem.string() + ".pgm", r.addressing);
}

}  // namespace apex
