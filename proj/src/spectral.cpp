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

#include "apex/spectral.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "apex/errors.hpp"
#include "apex/kernels.hpp"

namespace apex {

namespace {

using cplx = std::complex<double>;

void check_geometry(std::size_t h, std::size_t w, std::size_t c) {
  if (h < 4 || w < 4 || h % 2 || w % 2) {
    throw DomainError("image sides must be even and >= 4, got " + std::to_string(h) + "x" +
                      std::to_string(w));
  }
  if (c == 0) throw DomainError("image needs at least one channel");
}

// Centered index i of an axis of length n holds the same frequency as the
// unshifted (natural DFT order) index (i + n/2) mod n.
std::size_t unshift(std::size_t i, std::size_t n) { return (i + n / 2) % n; }

double canonical_phase(double phi) {
  return phi <= -std::numbers::pi ? std::numbers::pi : phi;
}

// Forward transform of one channel, returned in centered layout.
std::vector<cplx> centered_dft(std::span<const double> values, std::size_t h, std::size_t w,
                               std::size_t c, std::size_t ch) {
  std::vector<cplx> plane(h * w);
  for (std::size_t p = 0; p < h * w; ++p) plane[p] = values[p * c + ch];
  kernels::dft2(plane, h, w, -1);
  std::vector<cplx> centered(h * w);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      centered[y * w + x] = plane[unshift(y, h) * w + unshift(x, w)];
  return centered;
}

}  // namespace

Image::Image(std::size_t height, std::size_t width, std::size_t channels,
             std::vector<double> values)
    : h_(height), w_(width), c_(channels), values_(std::move(values)) {
  check_geometry(h_, w_, c_);
  if (values_.size() != h_ * w_ * c_) throw ShapeError("image: value count mismatch");
  for (double v : values_) {
    if (!std::isfinite(v)) throw DomainError("image: non-finite pixel");
  }
}

Image Image::filled(std::size_t height, std::size_t width, std::size_t channels, double v) {
  return Image(height, width, channels, std::vector<double>(height * width * channels, v));
}

double Image::mean() const {
  double s = 0.0;
  for (double v : values_) s += v;
  return s / static_cast<double>(values_.size());
}

Tensor Image::to_tensor() const { return Tensor(Shape{h_, w_, c_}, values_); }

double max_abs_diff(const Image& a, const Image& b) {
  if (a.height() != b.height() || a.width() != b.width() || a.channels() != b.channels()) {
    throw ShapeError("max_abs_diff: image geometry differs");
  }
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    m = std::max(m, std::abs(a.values()[i] - b.values()[i]));
  return m;
}

Spectrum fft2(const Image& img) {
  const std::size_t h = img.height(), w = img.width(), c = img.channels();
  Spectrum s{h, w, c, Tensor(Shape{h, w, c}), Tensor(Shape{h, w, c})};
  for (std::size_t ch = 0; ch < c; ++ch) {
    const auto plane = centered_dft(img.values(), h, w, c, ch);
    for (std::size_t p = 0; p < h * w; ++p) {
      s.amplitude[p * c + ch] = std::abs(plane[p]);
      s.phase[p * c + ch] = canonical_phase(std::arg(plane[p]));
    }
  }
  return s;
}

InverseResult ifft2_with_residual(const Spectrum& spec) {
  const std::size_t h = spec.height, w = spec.width, c = spec.channels;
  check_geometry(h, w, c);
  if (spec.amplitude.shape() != Shape{h, w, c} || spec.phase.shape() != Shape{h, w, c}) {
    throw ShapeError("ifft2: spectrum arrays do not match its geometry");
  }
  if (!spec.amplitude.all_finite() || !spec.phase.all_finite()) {
    throw DomainError("ifft2: non-finite spectrum");
  }

  double peak = 1.0;
  for (double a : spec.amplitude.data()) peak = std::max(peak, a);
  const double tol = kHermitianTolerance * peak;

  std::vector<double> out(h * w * c);
  double residual = 0.0;
  std::vector<cplx> plane(h * w);
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        const cplx v = spec.coefficient((y * w + x) * c + ch);
        const cplx m = spec.coefficient((mirror_index(y, h) * w + mirror_index(x, w)) * c + ch);
        if (std::abs(v - std::conj(m)) > tol) {
          throw AsymmetricSpectrumError("ifft2: spectrum is not conjugate-symmetric at (" +
                                        std::to_string(y) + ", " + std::to_string(x) + ")");
        }
        plane[unshift(y, h) * w + unshift(x, w)] = v;
      }
    }
    kernels::dft2(plane, h, w, +1);
    const double scale = 1.0 / static_cast<double>(h * w);
    for (std::size_t p = 0; p < h * w; ++p) {
      out[p * c + ch] = plane[p].real() * scale;
      residual = std::max(residual, std::abs(plane[p].imag() * scale));
    }
  }
  return {Image(h, w, c, std::move(out)), residual};
}

Image ifft2(const Spectrum& spec) { return ifft2_with_residual(spec).image; }

std::size_t RegionLayout::flat_index(std::size_t e) const {
  const std::size_t ch = e % channels;
  const std::size_t cell = e / channels;
  const std::size_t r = rows[cell / cols.size()];
  const std::size_t col = cols[cell % cols.size()];
  return (r * width + col) * channels + ch;
}

std::size_t RegionLayout::mirror_entry(std::size_t e) const {
  const std::size_t ch = e % channels;
  const std::size_t cell = e / channels;
  const auto pos = [](const std::vector<std::size_t>& idx, std::size_t v) {
    return static_cast<std::size_t>(std::lower_bound(idx.begin(), idx.end(), v) - idx.begin());
  };
  const std::size_t mr = pos(rows, mirror_index(rows[cell / cols.size()], height));
  const std::size_t mc = pos(cols, mirror_index(cols[cell % cols.size()], width));
  return (mr * cols.size() + mc) * channels + ch;
}

Tensor RegionLayout::mask() const {
  Tensor m(Shape{height, width});
  for (auto r : rows)
    for (auto c : cols) m.at(r, c) = 1.0;
  return m;
}

RegionLayout low_freq_layout(std::size_t height, std::size_t width, std::size_t channels,
                             double beta) {
  check_geometry(height, width, channels);
  if (!(beta > 0.0 && beta <= 1.0)) {
    throw DomainError("low-frequency fraction must be in (0, 1], got " + std::to_string(beta));
  }
  const auto side = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::lround(beta * static_cast<double>(std::min(height, width)))));
  const std::size_t radius = side / 2;
  auto axis = [&](std::size_t n) {
    std::vector<std::size_t> idx;
    if (beta == 1.0 || 2 * radius + 1 > n) {
      for (std::size_t i = 0; i < n; ++i) idx.push_back(i);
    } else {
      for (std::size_t i = n / 2 - radius; i <= n / 2 + radius; ++i) idx.push_back(i);
    }
    return idx;
  };
  return {height, width, channels, beta, axis(height), axis(width)};
}

LowFreqRegion extract_low_freq(const Spectrum& spec, double beta) {
  LowFreqRegion region{low_freq_layout(spec.height, spec.width, spec.channels, beta), {}};
  region.values = Tensor(Shape{region.layout.size()});
  for (std::size_t e = 0; e < region.layout.size(); ++e)
    region.values[e] = spec.amplitude[region.layout.flat_index(e)];
  return region;
}

PromptMultiplier PromptMultiplier::identity(const RegionLayout& layout) {
  return {layout, Tensor::ones(Shape{layout.size()})};
}

void PromptMultiplier::validate() const {
  if (values.size() != layout.size()) throw ShapeError("prompt: size does not match region");
  for (std::size_t e = 0; e < values.size(); ++e) {
    const double v = values[e];
    if (!(v > 0.0) || !std::isfinite(v)) throw DomainError("prompt multiplier must be positive");
    const double m = values[layout.mirror_entry(e)];
    if (std::abs(v - m) > 1e-12 * std::max(std::abs(v), std::abs(m))) {
      throw DomainError("prompt multiplier is not symmetric under frequency negation");
    }
  }
}

Tensor symmetrize(const Tensor& values, const RegionLayout& layout) {
  const std::size_t len = layout.size();
  if (values.empty() || values.shape().back() != len) {
    throw ShapeError("symmetrize: trailing dimension must equal region size");
  }
  Tensor out(values.shape());
  for (std::size_t base = 0; base < values.size(); base += len)
    for (std::size_t e = 0; e < len; ++e)
      out[base + e] = 0.5 * (values[base + e] + values[base + layout.mirror_entry(e)]);
  return out;
}

Spectrum apply_prompt(const Spectrum& spec, const PromptMultiplier& p) {
  if (p.layout.height != spec.height || p.layout.width != spec.width ||
      p.layout.channels != spec.channels) {
    throw ShapeError("apply_prompt: prompt region does not match spectrum geometry");
  }
  p.validate();
  Spectrum out = spec;
  for (std::size_t e = 0; e < p.layout.size(); ++e) out.amplitude[p.layout.flat_index(e)] *= p.values[e];
  return out;
}

Image prompted_image(const Image& img, const PromptMultiplier& p) {
  return ifft2(apply_prompt(fft2(img), p));
}

ad::Var prompted_images(std::span<const Spectrum* const> spectra, const RegionLayout& layout,
                        const ad::Var& multipliers) {
  const std::size_t n = spectra.size();
  const std::size_t len = layout.size();
  const std::size_t pix = layout.height * layout.width * layout.channels;
  if (multipliers.value().shape() != Shape{n, len}) {
    throw ShapeError("prompted_images: multipliers must be " + shape_string(Shape{n, len}));
  }
  Tensor out(Shape{n, pix});
  const auto count = static_cast<long>(n);
#pragma omp parallel for schedule(static) if (n > 1)
  for (long b = 0; b < count; ++b) {
    const auto row = static_cast<std::size_t>(b);
    PromptMultiplier p{layout, Tensor(Shape{len})};
    std::copy_n(multipliers.value().data().begin() + static_cast<std::ptrdiff_t>(row * len), len,
                p.values.data().begin());
    const Image img = ifft2(apply_prompt(*spectra[row], p));
    std::copy(img.values().begin(), img.values().end(),
              out.data().begin() + static_cast<std::ptrdiff_t>(row * pix));
  }

  std::vector<const Spectrum*> keep(spectra.begin(), spectra.end());
  return ad::make_node(
      std::move(out), "prompted_images", {multipliers},
      [keep = std::move(keep), layout, n, len, pix](ad::Node& self) {
        // y = Re(IFFT(P .* X))  =>  dL/dP_k = Re(X_k conj(G_k)) / (h w), G = FFT(dL/dy).
        const std::size_t h = layout.height, w = layout.width, c = layout.channels;
        const double scale = 1.0 / static_cast<double>(h * w);
        Tensor& gm = self.parents[0]->grad;
        const auto count = static_cast<long>(n);
#pragma omp parallel for schedule(static) if (n > 1)
        for (long b = 0; b < count; ++b) {
          const auto row = static_cast<std::size_t>(b);
          const auto g = self.grad.data().subspan(row * pix, pix);
          std::vector<std::vector<cplx>> planes;
          for (std::size_t ch = 0; ch < c; ++ch) planes.push_back(centered_dft(g, h, w, c, ch));
          for (std::size_t e = 0; e < len; ++e) {
            const std::size_t flat = layout.flat_index(e);
            const cplx x = keep[row]->coefficient(flat);
            const cplx gk = planes[flat % c][flat / c];
            gm[row * len + e] += (x * std::conj(gk)).real() * scale;
          }
        }
      });
}

ad::Var symmetrize(const ad::Var& values, const RegionLayout& layout) {
  std::vector<std::size_t> mirror(layout.size());
  for (std::size_t e = 0; e < mirror.size(); ++e) mirror[e] = layout.mirror_entry(e);
  return ad::mul_scalar(ad::add(values, ad::gather_cols(values, mirror)), 0.5);
}

}  // namespace apex
