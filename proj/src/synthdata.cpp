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

#include "apex/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <numbers>
#include <set>
#include <sstream>

#include "apex/errors.hpp"
#include "apex/kernels.hpp"
#include "apex/losses.hpp"
#include "apex/random.hpp"

namespace apex {

namespace {

constexpr std::array<std::array<int, 2>, 3> kShadingModes{{{1, 0}, {0, 1}, {1, 1}}};

// Distinct derived streams of one sample seed.
enum Stream : std::uint64_t { kScene = 0, kDomain = 1, kNoise = 2 };

}  // namespace

Scene gen_base_scene(std::uint64_t seed, const SceneConfig& cfg) {
  const std::size_t h = cfg.height, w = cfg.width;
  if (h < 32 || w < 32 || h % 2 || w % 2) throw DomainError("gen_base_scene: sides must be even and >= 32");
  if (cfg.max_lesions < 1 || !(cfg.min_area < cfg.max_area) || !(cfg.min_radius <= cfg.max_radius))
    throw DomainError("gen_base_scene: inconsistent lesion bounds");

  Rng rng(derive_seed(seed, kScene));
  Tensor mask({h, w});
  std::vector<double> level(h * w, cfg.background);
  // Rejection loop on the lesion layout; texture is drawn after acceptance.
  for (;;) {
    std::fill(mask.storage().begin(), mask.storage().end(), 0.0);
    std::fill(level.begin(), level.end(), cfg.background);
    const std::size_t count = 1 + uniform_index(rng, cfg.max_lesions);
    for (std::size_t l = 0; l < count; ++l) {
      const double margin = cfg.max_radius;
      const double cy = uniform(rng, margin, static_cast<double>(h) - margin);
      const double cx = uniform(rng, margin, static_cast<double>(w) - margin);
      const double ry = uniform(rng, cfg.min_radius, cfg.max_radius);
      const double rx = uniform(rng, cfg.min_radius, cfg.max_radius);
      const double angle = uniform(rng, 0.0, std::numbers::pi);
      const double intensity = cfg.lesion + uniform(rng, -0.03, 0.03);
      const double ca = std::cos(angle), sa = std::sin(angle);
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
          const double dy = static_cast<double>(y) + 0.5 - cy;
          const double dx = static_cast<double>(x) + 0.5 - cx;
          const double u = (ca * dy + sa * dx) / ry, v = (-sa * dy + ca * dx) / rx;
          if (u * u + v * v <= 1.0) {
            mask.at(y, x) = 1.0;
            level[y * w + x] = intensity;
          }
        }
    }
    double area = 0.0;
    for (double m : mask.data()) area += m;
    area /= static_cast<double>(h * w);
    if (area >= cfg.min_area && area <= cfg.max_area) break;
  }
  for (auto& v : level) v += uniform(rng, -cfg.texture, cfg.texture);
  return {Image(h, w, 1, std::move(level)), std::move(mask)};
}

void DomainSpec::validate() const {
  if (!(gain > 0.0)) throw DomainError("domain " + name + ": gain must be positive");
  if (noise_sigma < 0.0 || gain_jitter < 0.0 || bias_jitter < 0.0 || gain_jitter >= 1.0)
    throw DomainError("domain " + name + ": invalid noise or jitter");
  double total = 0.0;
  for (double a : shading) total += std::abs(a);
  if (total >= 1.0) throw DomainError("domain " + name + ": shading could vanish");
}

Tensor shading_field(const DomainSpec& spec, std::size_t h, std::size_t w, std::uint64_t seed) {
  Rng rng(derive_seed(seed, kDomain));
  std::array<double, 3> phase{};
  for (auto& p : phase) p = uniform(rng, 0.0, 2.0 * std::numbers::pi);
  Tensor field({h, w}, 1.0);
  for (std::size_t k = 0; k < kShadingModes.size(); ++k) {
    if (spec.shading[k] == 0.0) continue;
    const double fu = kShadingModes[k][0], fv = kShadingModes[k][1];
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x)
        field.at(y, x) += spec.shading[k] *
                          std::cos(2.0 * std::numbers::pi *
                                       (fu * static_cast<double>(y) / static_cast<double>(h) +
                                        fv * static_cast<double>(x) / static_cast<double>(w)) +
                                   phase[k]);
  }
  return field;
}

Image apply_domain(const Image& img, const DomainSpec& spec, std::uint64_t seed) {
  spec.validate();
  const std::size_t h = img.height(), w = img.width(), c = img.channels();
  const Tensor field = shading_field(spec, h, w, seed);
  Rng rng(derive_seed(seed, kNoise));
  const double gain = spec.gain * (1.0 + (spec.gain_jitter > 0 ? uniform(rng, -spec.gain_jitter, spec.gain_jitter) : 0.0));
  const double bias = spec.bias + (spec.bias_jitter > 0 ? uniform(rng, -spec.bias_jitter, spec.bias_jitter) : 0.0);
  std::vector<double> out(img.size());
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t ch = 0; ch < c; ++ch) {
        double v = gain * field.at(y, x) * img.at(y, x, ch) + bias;
        if (spec.noise_sigma > 0.0) v += normal(rng, 0.0, spec.noise_sigma);
        out[(y * w + x) * c + ch] = std::clamp(v, 0.0, 1.0);
      }
  return Image(h, w, c, std::move(out));
}

BenchmarkConfig default_benchmark_config() {
  BenchmarkConfig cfg;
  cfg.source = {0, "source", 1.0, 0.0, {0.0, 0.0, 0.0}, 0.01, 0.0, 0.0};
  cfg.seen = {
      {1, "A", 0.65, 0.0, {0.08, 0.0, 0.0}, 0.01, 0.05, 0.02},
      {2, "B", 1.0, 0.25, {0.0, 0.08, 0.0}, 0.01, 0.05, 0.02},
  };
  cfg.unseen = {
      {3, "C", 0.6, 0.03, {0.08, 0.08, 0.0}, 0.01, 0.05, 0.02},
      {4, "D", 0.9, 0.3, {0.0, 0.0, 0.1}, 0.01, 0.05, 0.02},
  };
  return cfg;
}

bool in_convex_hull(std::span<const DomainSpec> hull, double gain, double bias) {
  // Exact for hulls of up to two points (a point or a segment); for more
  // points, a point-in-polygon test over the sorted hull vertices.
  constexpr double kTol = 1e-12;
  if (hull.empty()) return false;
  if (hull.size() == 1) return std::abs(hull[0].gain - gain) < kTol && std::abs(hull[0].bias - bias) < kTol;
  std::vector<std::array<double, 2>> pts;
  for (const auto& d : hull) pts.push_back({d.gain, d.bias});
  std::sort(pts.begin(), pts.end());
  pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
  auto cross = [](const std::array<double, 2>& o, const std::array<double, 2>& a,
                  const std::array<double, 2>& b) {
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0]);
  };
  // Andrew's monotone chain.
  std::vector<std::array<double, 2>> h;
  for (int pass = 0; pass < 2; ++pass) {
    const std::size_t start = h.size();
    for (const auto& p : pts) {
      while (h.size() >= start + 2 && cross(h[h.size() - 2], h.back(), p) <= 0) h.pop_back();
      h.push_back(p);
    }
    h.pop_back();
    std::reverse(pts.begin(), pts.end());
  }
  const std::array<double, 2> q{gain, bias};
  if (h.size() <= 2) {
    const auto& a = h.front();
    const auto& b = h.size() == 2 ? h[1] : h.front();
    if (std::abs(cross(a, b, q)) > kTol) return false;
    return q[0] >= std::min(a[0], b[0]) - kTol && q[0] <= std::max(a[0], b[0]) + kTol &&
           q[1] >= std::min(a[1], b[1]) - kTol && q[1] <= std::max(a[1], b[1]) + kTol;
  }
  for (std::size_t i = 0; i < h.size(); ++i)
    if (cross(h[i], h[(i + 1) % h.size()], q) < -kTol) return false;
  return true;
}

const std::vector<std::string>& Benchmark::split_names() {
  static const std::vector<std::string> names{"source_train", "source_test", "train_seen",
                                              "test_seen", "test_unseen"};
  return names;
}

namespace {

template <typename B>
auto& split_of(B& b, const std::string& name) {
  if (name == "source_train") return b.source_train;
  if (name == "source_test") return b.source_test;
  if (name == "train_seen") return b.train_seen;
  if (name == "test_seen") return b.test_seen;
  if (name == "test_unseen") return b.test_unseen;
  throw DomainError("unknown split: " + name);
}

}  // namespace

const std::vector<DomainSample>& Benchmark::split(const std::string& name) const {
  return split_of(*this, name);
}

Benchmark build_benchmark(const BenchmarkConfig& cfg, std::uint64_t seed) {
  if (cfg.seen.size() < 2 || cfg.unseen.size() < 2)
    throw DomainError("build_benchmark: need at least two seen and two unseen domains");
  std::set<int> ids{cfg.source.id};
  for (const auto* group : {&cfg.seen, &cfg.unseen})
    for (const auto& d : *group) {
      d.validate();
      if (!ids.insert(d.id).second) throw DomainError("build_benchmark: duplicate domain id");
    }
  for (const auto& d : cfg.unseen)
    if (in_convex_hull(cfg.seen, d.gain, d.bias))
      throw DomainError("build_benchmark: unseen domain " + d.name + " overlaps the seen range");

  Benchmark b{cfg, seed, {}, {}, {}, {}, {}};
  std::uint64_t counter = 0;
  auto make = [&](const DomainSpec& spec, std::size_t count, std::vector<DomainSample>& out) {
    for (std::size_t i = 0; i < count; ++i) {
      const std::uint64_t scene_seed = derive_seed(seed, counter++);
      Scene scene = gen_base_scene(scene_seed, cfg.scene);
      out.push_back({apply_domain(scene.image, spec, scene_seed), std::move(scene.mask), spec.id,
                     scene_seed});
    }
  };
  make(cfg.source, cfg.train_per_domain, b.source_train);
  make(cfg.source, cfg.test_per_domain, b.source_test);
  for (const auto& d : cfg.seen) make(d, cfg.train_per_domain, b.train_seen);
  for (const auto& d : cfg.seen) make(d, cfg.test_per_domain, b.test_seen);
  for (const auto& d : cfg.unseen) make(d, cfg.test_per_domain, b.test_unseen);
  return b;
}

namespace {

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

const DomainSpec* find_spec(const BenchmarkConfig& cfg, int id) {
  if (cfg.source.id == id) return &cfg.source;
  for (const auto* group : {&cfg.seen, &cfg.unseen})
    for (const auto& d : *group)
      if (d.id == id) return &d;
  return nullptr;
}

}  // namespace

std::string benchmark_manifest_csv(const Benchmark& b) {
  std::ostringstream os;
  os << "sample_id,domain_id,domain,split,scene_seed,gain,bias,shading_10,shading_01,shading_11,"
        "noise_sigma,gain_jitter,bias_jitter\n";
  for (const auto& name : Benchmark::split_names()) {
    const auto& samples = b.split(name);
    for (std::size_t i = 0; i < samples.size(); ++i) {
      const DomainSample& s = samples[i];
      const DomainSpec* spec = find_spec(b.config, s.domain_id);
      os << name << '/' << i << ',' << s.domain_id << ',' << (spec ? spec->name : "") << ','
         << name << ',' << s.scene_seed;
      if (spec) {
        for (double v : {spec->gain, spec->bias, spec->shading[0], spec->shading[1],
                         spec->shading[2], spec->noise_sigma, spec->gain_jitter, spec->bias_jitter})
          os << ',' << format_double(v);
      } else {
        os << ",,,,,,,,";
      }
      os << '\n';
    }
  }
  return os.str();
}

void save_benchmark(const Benchmark& b, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream out(dir / "manifest.csv", std::ios::binary);
    out << benchmark_manifest_csv(b);
    if (!out) throw FormatError("cannot write " + (dir / "manifest.csv").string());
  }
  for (const auto& name : Benchmark::split_names()) {
    const auto& samples = b.split(name);
    if (samples.empty()) continue;
    const Image& first = samples.front().image;
    const std::size_t h = first.height(), w = first.width(), c = first.channels();
    Tensor images({samples.size(), h, w, c}), masks({samples.size(), h, w});
    for (std::size_t i = 0; i < samples.size(); ++i) {
      std::copy(samples[i].image.values().begin(), samples[i].image.values().end(),
                images.data().begin() + static_cast<std::ptrdiff_t>(i * h * w * c));
      std::copy(samples[i].mask.data().begin(), samples[i].mask.data().end(),
                masks.data().begin() + static_cast<std::ptrdiff_t>(i * h * w));
    }
    save_tensor((dir / (name + "_images.apxt")).string(), images);
    save_tensor((dir / (name + "_masks.apxt")).string(), masks);
  }
}

Benchmark load_benchmark(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.csv");
  if (!in) throw FormatError("missing manifest in " + dir.string());
  std::string line;
  std::getline(in, line);
  std::map<std::string, std::vector<std::pair<int, std::uint64_t>>> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string id, domain, name, split, seed;
    std::getline(ls, id, ',');
    std::getline(ls, domain, ',');
    std::getline(ls, name, ',');
    std::getline(ls, split, ',');
    std::getline(ls, seed, ',');
    try {
      rows[split].emplace_back(std::stoi(domain), std::stoull(seed));
    } catch (const std::exception&) {
      throw FormatError("malformed manifest row: " + line);
    }
  }
  Benchmark b;
  for (const auto& name : Benchmark::split_names()) {
    const auto& meta = rows[name];
    if (meta.empty()) continue;
    const Tensor images = load_tensor((dir / (name + "_images.apxt")).string());
    const Tensor masks = load_tensor((dir / (name + "_masks.apxt")).string());
    if (images.rank() != 4 || masks.rank() != 3 || images.dim(0) != meta.size() ||
        masks.dim(0) != meta.size())
      throw FormatError("split " + name + " disagrees with the manifest");
    const std::size_t h = images.dim(1), w = images.dim(2), c = images.dim(3);
    auto& out = split_of(b, name);
    for (std::size_t i = 0; i < meta.size(); ++i) {
      const auto img_begin = images.data().begin() + static_cast<std::ptrdiff_t>(i * h * w * c);
      const auto mask_begin = masks.data().begin() + static_cast<std::ptrdiff_t>(i * h * w);
      out.push_back({Image(h, w, c, std::vector<double>(img_begin, img_begin + static_cast<std::ptrdiff_t>(h * w * c))),
                     Tensor({h, w}, std::vector<double>(mask_begin, mask_begin + static_cast<std::ptrdiff_t>(h * w))),
                     meta[i].first, meta[i].second});
    }
  }
  return b;
}

std::uint64_t FrozenBackbone::hash() const {
  return tensor_hash(Tensor::vector({threshold, slope, static_cast<double>(radius)}));
}

namespace {

ad::Var blur_rows(const ad::Var& images, std::size_t h, std::size_t w, int radius) {
  const Tensor& v = images.value();
  if (v.rank() != 2 || v.dim(1) != h * w) throw ShapeError("backbone: expected [n x h*w] images");
  const std::size_t n = v.dim(0), plane = h * w;
  Tensor out(v.shape());
  for (std::size_t i = 0; i < n; ++i)
    kernels::box_blur(v.data().subspan(i * plane, plane), out.data().subspan(i * plane, plane), h,
                      w, radius);
  return ad::make_node(std::move(out), "box_blur", {images}, [n, h, w, radius](ad::Node& self) {
    const auto& p = self.parents[0];
    if (!p->requires_grad) return;
    const std::size_t plane = h * w;
    std::vector<double> g(plane);
    for (std::size_t i = 0; i < n; ++i) {
      kernels::box_blur_adjoint(self.grad.data().subspan(i * plane, plane), g, h, w, radius);
      for (std::size_t k = 0; k < plane; ++k) p->grad[i * plane + k] += g[k];
    }
  });
}

}  // namespace

ad::Var backbone_forward(const FrozenBackbone& bb, const ad::Var& images, std::size_t h,
                         std::size_t w) {
  const ad::Var blurred = blur_rows(images, h, w, bb.radius);
  return ad::sigmoid(ad::mul_scalar(ad::add_scalar(blurred, -bb.threshold), 1.0 / bb.slope));
}

Tensor backbone_predict(const FrozenBackbone& bb, const Image& img) {
  if (img.channels() != 1) throw ShapeError("backbone: single-channel images only");
  const std::size_t h = img.height(), w = img.width();
  const Tensor row({1, h * w}, std::vector<double>(img.values().begin(), img.values().end()));
  return backbone_forward(bb, ad::constant(row), h, w).value().reshaped({h, w});
}

double hard_dice(std::span<const double> pred, std::span<const double> mask, double threshold) {
  if (pred.size() != mask.size()) throw ShapeError("hard_dice: size mismatch");
  double inter = 0, p = 0, g = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double b = pred[i] > threshold ? 1.0 : 0.0;
    inter += b * mask[i];
    p += b;
    g += mask[i];
  }
  return p + g == 0.0 ? 1.0 : 2.0 * inter / (p + g);
}

namespace {

// Blurred source images and masks, computed once for the whole grid search.
struct CalibrationData {
  std::vector<std::vector<double>> blurred;
  std::vector<std::span<const double>> masks;
};

double mean_dice_at(const CalibrationData& d, double t) {
  double acc = 0.0;
  for (std::size_t i = 0; i < d.blurred.size(); ++i)
    acc += hard_dice(d.blurred[i], d.masks[i], t);
  return acc / static_cast<double>(d.blurred.size());
}

}  // namespace

FrozenBackbone backbone_calibrate(std::span<const DomainSample> source,
                                  const CalibrationGrid& grid) {
  if (source.empty()) throw DomainError("backbone_calibrate: empty source set");
  bool any_lesion = false;
  CalibrationData data;
  for (const auto& s : source) {
    if (s.image.channels() != 1) throw ShapeError("backbone_calibrate: single-channel images only");
    const std::size_t h = s.image.height(), w = s.image.width();
    std::vector<double> out(h * w);
    kernels::box_blur(s.image.values(), out, h, w, grid.radius);
    data.blurred.push_back(std::move(out));
    data.masks.push_back(s.mask.data());
    for (double m : s.mask.data()) any_lesion = any_lesion || m > 0.0;
  }
  if (!any_lesion) throw DomainError("backbone_calibrate: source masks are all empty");

  std::vector<double> best;
  double best_dice = -1.0;
  const auto steps = static_cast<int>(std::lround((grid.t_hi - grid.t_lo) / grid.t_step));
  for (int k = 0; k <= steps; ++k) {
    const double t = grid.t_lo + grid.t_step * k;
    const double d = mean_dice_at(data, t);
    if (d > best_dice + 1e-12) {
      best_dice = d;
      best = {t};
    } else if (std::abs(d - best_dice) <= 1e-12) {
      best.push_back(t);
    }
  }
  FrozenBackbone bb;
  bb.radius = grid.radius;
  bb.threshold = best[(best.size() - 1) / 2];

  // Stack the source set once and score every slope on the seg loss.
  const std::size_t plane = data.blurred.front().size();
  Tensor images({source.size(), plane}), masks({source.size(), plane});
  for (std::size_t i = 0; i < source.size(); ++i) {
    std::copy(source[i].image.values().begin(), source[i].image.values().end(),
              images.data().begin() + static_cast<std::ptrdiff_t>(i * plane));
    std::copy(source[i].mask.data().begin(), source[i].mask.data().end(),
              masks.data().begin() + static_cast<std::ptrdiff_t>(i * plane));
  }
  double best_loss = INFINITY;
  const ad::Var x = ad::constant(images);
  for (double s : grid.slopes) {
    FrozenBackbone trial = bb;
    trial.slope = s;
    const double loss = seg_loss(backbone_forward(trial, x, source[0].image.height(),
                                                  source[0].image.width()),
                                 masks)
                            .total.value()
                            .item();
    if (loss < best_loss) {
      best_loss = loss;
      bb.slope = s;
    }
  }
  return bb;
}

double backbone_mean_dice(const FrozenBackbone& bb, std::span<const DomainSample> samples) {
  if (samples.empty()) return 0.0;
  double acc = 0.0;
  for (const auto& s : samples) acc += hard_dice(backbone_predict(bb, s.image).data(), s.mask.data());
  return acc / static_cast<double>(samples.size());
}

}  // namespace apex
