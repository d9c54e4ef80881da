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

#include "apex/apex.hpp"

#include <cmath>
#include <fstream>

#include "apex/errors.hpp"
#include "apex/init.hpp"
#include "apex/kernels.hpp"
#include "apex/optim.hpp"

namespace apex {

namespace {

enum Stream : std::uint64_t { kEncoder = 10, kMemory = 11, kDecoder = 12, kHead = 13 };

constexpr const char* kCheckpointFormat = "apex-checkpoint-1";

std::vector<std::size_t> widths(std::size_t in, const std::vector<std::size_t>& hidden,
                                std::size_t out) {
  std::vector<std::size_t> w{in};
  w.insert(w.end(), hidden.begin(), hidden.end());
  w.push_back(out);
  return w;
}

}  // namespace

void ApexConfig::validate() const {
  if (feature_dim == 0 || slots == 0 || aux_dim == 0)
    throw DomainError("apex config: dimensions must be positive");
  for (const auto* h : {&encoder_hidden, &decoder_hidden, &head_hidden})
    for (std::size_t w : *h)
      if (w == 0) throw DomainError("apex config: zero hidden width");
  if (!(beta > 0.0 && beta <= 1.0)) throw DomainError("apex config: beta must lie in (0, 1]");
  if (!(tau > 0.0)) throw DomainError("apex config: tau must be positive");
  if (!(eta >= 0.0) || !std::isfinite(eta)) throw DomainError("apex config: invalid eta");
  if (slots > feature_dim && !allow_block_init)
    throw DomainError("apex config: J > K needs allow_block_init");
}

void ApexConfig::to_kv(KeyValues& kv) const {
  kv.set("feature_dim", static_cast<long long>(feature_dim));
  kv.set("slots", static_cast<long long>(slots));
  kv.set("encoder_hidden", join_sizes(encoder_hidden));
  kv.set("decoder_hidden", join_sizes(decoder_hidden));
  kv.set("head_hidden", join_sizes(head_hidden));
  kv.set("aux_dim", static_cast<long long>(aux_dim));
  kv.set("beta", beta);
  kv.set("tau", tau);
  kv.set("eta", eta);
  kv.set("seed", std::to_string(seed));
  kv.set("use_memory", use_memory);
  kv.set("softmax_addressing", softmax_addressing);
  kv.set("full_graph_memory", full_graph_memory);
  kv.set("allow_block_init", allow_block_init);
}

ApexConfig ApexConfig::from_kv(const KeyValues& kv) {
  ApexConfig c;
  auto size = [&](const char* key, std::size_t& out) {
    if (!kv.has(key)) return;
    const long long v = kv.get_int(key);
    if (v < 0) throw FormatError(std::string("config: ") + key + " must be non-negative");
    out = static_cast<std::size_t>(v);
  };
  size("feature_dim", c.feature_dim);
  size("slots", c.slots);
  size("aux_dim", c.aux_dim);
  if (kv.has("encoder_hidden")) c.encoder_hidden = kv.get_sizes("encoder_hidden");
  if (kv.has("decoder_hidden")) c.decoder_hidden = kv.get_sizes("decoder_hidden");
  if (kv.has("head_hidden")) c.head_hidden = kv.get_sizes("head_hidden");
  if (kv.has("beta")) c.beta = kv.get_double("beta");
  if (kv.has("tau")) c.tau = kv.get_double("tau");
  if (kv.has("eta")) c.eta = kv.get_double("eta");
  if (kv.has("seed")) c.seed = kv.get_u64("seed");
  if (kv.has("use_memory")) c.use_memory = kv.get_bool("use_memory");
  if (kv.has("softmax_addressing")) c.softmax_addressing = kv.get_bool("softmax_addressing");
  if (kv.has("full_graph_memory")) c.full_graph_memory = kv.get_bool("full_graph_memory");
  if (kv.has("allow_block_init")) c.allow_block_init = kv.get_bool("allow_block_init");
  return c;
}

std::vector<ad::Var> ApexState::network_parameters() const {
  std::vector<ad::Var> out = encoder.parameters();
  for (const auto& p : decoder.parameters()) out.push_back(p);
  if (head)
    for (const auto& p : head->parameters()) out.push_back(p);
  return out;
}

std::uint64_t ApexState::memory_hash() const { return tensor_hash(memory.value()); }

ApexState init_apex(const ApexConfig& config, std::size_t height, std::size_t width,
                    std::size_t channels, bool with_head) {
  config.validate();
  ApexState s;
  s.config = config;
  s.layout = low_freq_layout(height, width, channels, config.beta);
  const std::size_t l = s.layout.size(), k = config.feature_dim;

  Rng enc_rng(derive_seed(config.seed, kEncoder));
  s.encoder = make_mlp(widths(l, config.encoder_hidden, k), {}, enc_rng);
  s.memory = ad::parameter(orthogonal_rows(config.slots, k, derive_seed(config.seed, kMemory),
                                           config.allow_block_init));
  Rng dec_rng(derive_seed(config.seed, kDecoder));
  MlpInit dec_init;
  dec_init.zero_output_layer = true;
  s.decoder = make_mlp(widths(k, config.decoder_hidden, l), dec_init, dec_rng);
  if (with_head) {
    Rng head_rng(derive_seed(config.seed, kHead));
    s.head = make_mlp(widths(k, config.head_hidden, config.aux_dim), {}, head_rng);
  }
  s.input_shift = Tensor::zeros({l});
  s.input_scale = Tensor::ones({l});
  return s;
}

Tensor encoder_input(const Spectrum& spec, const RegionLayout& layout) {
  if (spec.height != layout.height || spec.width != layout.width ||
      spec.channels != layout.channels)
    throw ShapeError("encoder_input: spectrum geometry differs from the region layout");
  Tensor out(Shape{layout.size()});
  for (std::size_t e = 0; e < layout.size(); ++e)
    out[e] = std::log1p(spec.amplitude[layout.flat_index(e)]);
  return out;
}

void fit_input_standardization(ApexState& state, const Tensor& raw) {
  const std::size_t l = state.layout.size();
  if (raw.rank() != 2 || raw.dim(1) != l || raw.dim(0) == 0)
    throw ShapeError("fit_input_standardization: expected a nonempty [n x " + std::to_string(l) +
                     "] tensor");
  const std::size_t n = raw.dim(0);
  for (std::size_t e = 0; e < l; ++e) {
    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) mean += raw.at(i, e);
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t i = 0; i < n; ++i) var += (raw.at(i, e) - mean) * (raw.at(i, e) - mean);
    const double sd = std::sqrt(var / static_cast<double>(n));
    state.input_shift[e] = mean;
    state.input_scale[e] = sd > 1e-12 ? 1.0 / sd : 1.0;
  }
}

Tensor standardize_input(const ApexState& state, const Tensor& raw) {
  const std::size_t l = state.layout.size();
  if (raw.size() == 0 || raw.size() % l != 0 || raw.shape().back() != l)
    throw ShapeError("standardize_input: rows must have " + std::to_string(l) + " entries");
  Tensor out = raw;
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = (out[i] - state.input_shift[i % l]) * state.input_scale[i % l];
  return out;
}

ad::Var encode_domain(const MlpParams& encoder, const ad::Var& inputs) {
  return mlp_forward(encoder, inputs);
}

ad::Var address(const ad::Var& memory, const ad::Var& z, bool softmax, bool barrier) {
  const ad::Var a = ad::cosine_rows(z, barrier ? ad::stop_gradient(memory) : memory);
  return softmax ? ad::softmax_rows(a) : a;
}

ad::Var retrieve(const ad::Var& memory, const ad::Var& a) {
  if (a.value().rank() == 1)
    return ad::reshape(ad::matmul(ad::reshape(a, {1, a.value().size()}), memory),
                       {memory.value().dim(1)});
  return ad::matmul(a, memory);
}

ad::Var decode_prompt(const MlpParams& decoder, const ad::Var& z_prime,
                      const RegionLayout& layout) {
  if (decoder.out() != layout.size())
    throw ShapeError("decode_prompt: decoder emits " + std::to_string(decoder.out()) +
                     " values for a region of " + std::to_string(layout.size()));
  ad::Var raw = mlp_forward(decoder, z_prime);
  if (raw.value().rank() == 1) raw = ad::reshape(raw, {1, layout.size()});
  return symmetrize(ad::exp(raw), layout);
}

ad::Var project_aux(const MlpParams& head, const ad::Var& z) { return mlp_forward(head, z); }

ApexGraph apex_graph(const ApexState& state, std::span<const Spectrum* const> spectra,
                     const ad::Var& inputs, const ad::Var& memory, bool with_aux) {
  const ApexConfig& c = state.config;
  ApexGraph g;
  g.z = encode_domain(state.encoder, inputs);
  if (c.use_memory) {
    g.a = address(memory, g.z, c.softmax_addressing, !c.full_graph_memory);
    g.z_prime = retrieve(memory, g.a);
  } else {
    g.z_prime = g.z;
  }
  g.multipliers = decode_prompt(state.decoder, g.z_prime, state.layout);
  g.images = prompted_images(spectra, state.layout, g.multipliers);
  if (with_aux && state.head) g.aux = project_aux(*state.head, g.z);
  return g;
}

ApexOutput apex_forward(const ApexState& state, const Image& img) {
  const Spectrum spec = fft2(img);
  const Tensor in = standardize_input(state, encoder_input(spec, state.layout));
  const Spectrum* ptr = &spec;
  const ApexGraph g = apex_graph(state, std::span(&ptr, 1), ad::constant(in.reshaped({1, in.size()})),
                                 ad::constant(state.memory.value()), false);
  ApexOutput out;
  const auto px = g.images.value().data();
  out.image = Image(img.height(), img.width(), img.channels(), {px.begin(), px.end()});
  if (g.a.defined()) out.addressing = g.a.value().reshaped({state.config.slots});
  out.feature = g.z.value().reshaped({state.config.feature_dim});
  return out;
}

Tensor memory_gradient(const Tensor& a, const Tensor& g) {
  const Tensor a2 = a.rank() == 1 ? a.reshaped({1, a.size()}) : a;
  const Tensor g2 = g.rank() == 1 ? g.reshaped({1, g.size()}) : g;
  if (a2.rank() != 2 || g2.rank() != 2 || a2.dim(0) != g2.dim(0))
    throw ShapeError("memory_gradient: addressing and gradient batches disagree");
  const std::size_t n = a2.dim(0), j = a2.dim(1), k = g2.dim(1);
  Tensor out(Shape{j, k});
  kernels::gemm_tn(a2.data(), g2.data(), out.data(), j, n, k);
  return out;
}

void update_memory(Tensor& memory, const Tensor& grad, double eta) {
  sgd_step(memory, grad, eta);
}

namespace {

std::vector<Tensor> checkpoint_tensors(const ApexState& s) {
  std::vector<Tensor> out{s.memory.value(), s.input_shift, s.input_scale};
  for (const auto* mlp : {&s.encoder, &s.decoder}) {
    for (const auto& p : mlp->parameters()) out.push_back(p.value());
  }
  if (s.head)
    for (const auto& p : s.head->parameters()) out.push_back(p.value());
  return out;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const ApexState& state,
                     const KeyValues& extra) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const std::vector<Tensor> tensors = checkpoint_tensors(state);
  save_tensors(path.string(), tensors);

  KeyValues kv;
  kv.set("format", std::string(kCheckpointFormat));
  state.config.to_kv(kv);
  kv.set("height", static_cast<long long>(state.layout.height));
  kv.set("width", static_cast<long long>(state.layout.width));
  kv.set("channels", static_cast<long long>(state.layout.channels));
  kv.set("has_head", state.head.has_value());
  kv.set("step", static_cast<long long>(state.step));
  kv.set("tensor_count", static_cast<long long>(tensors.size()));
  kv.merge(extra);
  std::ofstream out(path.string() + ".manifest", std::ios::binary);
  out << kv.to_text();
  if (!out) throw FormatError("cannot write checkpoint manifest for " + path.string());
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  const KeyValues kv = KeyValues::load(path.string() + ".manifest");
  if (kv.get_string("format") != kCheckpointFormat)
    throw FormatError("unsupported checkpoint format: " + kv.get_string("format"));
  const ApexConfig config = ApexConfig::from_kv(kv);
  LoadedCheckpoint out{
      init_apex(config, static_cast<std::size_t>(kv.get_int("height")),
                static_cast<std::size_t>(kv.get_int("width")),
                static_cast<std::size_t>(kv.get_int("channels")), kv.get_bool("has_head")),
      kv};
  out.state.step = kv.get_int("step");

  const std::vector<Tensor> tensors = load_tensors(path.string());
  std::vector<ad::Var> slots{out.state.memory, ad::constant(out.state.input_shift),
                             ad::constant(out.state.input_scale)};
  for (const auto& p : out.state.encoder.parameters()) slots.push_back(p);
  for (const auto& p : out.state.decoder.parameters()) slots.push_back(p);
  if (out.state.head)
    for (const auto& p : out.state.head->parameters()) slots.push_back(p);
  if (tensors.size() != slots.size())
    throw FormatError("checkpoint holds " + std::to_string(tensors.size()) + " tensors, expected " +
                      std::to_string(slots.size()));
  for (std::size_t i = 0; i < slots.size(); ++i) {
    if (tensors[i].shape() != slots[i].value().shape())
      throw FormatError("checkpoint tensor " + std::to_string(i) + " has the wrong shape");
    slots[i].mutable_value() = tensors[i];
  }
  out.state.input_shift = slots[1].value();
  out.state.input_scale = slots[2].value();
  return out;
}

}  // namespace apex
