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

// Amplitude-domain prompting of images.
//
// All spectra use the centered layout: index i along an axis of length n
// holds frequency i - n/2, so DC sits at (h/2, w/2) and negating a frequency
// maps index i to (n - i) mod n. Images must have even sides so that this
// mirror is an involution on every centered block used below.

#pragma once

#include <complex>
#include <cstddef>
#include <span>
#include <vector>

#include "apex/autodiff.hpp"
#include "apex/tensor.hpp"

namespace apex {

/// Real image stored height x width x channels (channel fastest).
class Image {
 public:
  Image() = default;
  /// Throws DomainError for odd or < 4 sides, zero channels or non-finite values.
  Image(std::size_t height, std::size_t width, std::size_t channels, std::vector<double> values);
  static Image filled(std::size_t height, std::size_t width, std::size_t channels, double v);

  std::size_t height() const { return h_; }
  std::size_t width() const { return w_; }
  std::size_t channels() const { return c_; }
  std::size_t size() const { return values_.size(); }

  std::span<const double> values() const { return values_; }
  double at(std::size_t y, std::size_t x, std::size_t ch = 0) const {
    return values_[(y * w_ + x) * c_ + ch];
  }

  /// Mean over all pixels and channels.
  double mean() const;
  Tensor to_tensor() const;

  friend bool operator==(const Image&, const Image&) = default;

 private:
  std::size_t h_ = 0, w_ = 0, c_ = 0;
  std::vector<double> values_;
};

double max_abs_diff(const Image& a, const Image& b);

struct Spectrum {
  std::size_t height = 0, width = 0, channels = 0;
  Tensor amplitude;  // [h, w, c], >= 0
  Tensor phase;      // [h, w, c], in (-pi, pi]

  std::complex<double> coefficient(std::size_t flat) const {
    return std::polar(amplitude[flat], phase[flat]);
  }
};

/// Centered index of the frequency opposite to centered index i.
inline std::size_t mirror_index(std::size_t i, std::size_t n) { return (n - i) % n; }

/// Per-channel 2-D DFT, shifted to the centered layout, in polar form.
Spectrum fft2(const Image& img);

struct InverseResult {
  Image image;
  double max_imag_residual = 0.0;
};

/// Hermitian tolerance of ifft2, relative to max(1, peak amplitude).
inline constexpr double kHermitianTolerance = 1e-6;

/// Inverse of fft2. Throws AsymmetricSpectrumError when the spectrum is not
/// conjugate-symmetric; the (tiny) imaginary residual is dropped.
Image ifft2(const Spectrum& spec);
InverseResult ifft2_with_residual(const Spectrum& spec);

/// Geometry of the centered low-frequency block for a given cutoff fraction.
///
/// The nominal side is l = max(1, round(beta * min(h, w))). The block keeps
/// frequencies with |u|, |v| <= floor(l / 2), i.e. side 2*floor(l/2) + 1, so it
/// is closed under frequency negation; an axis the block would overflow is
/// taken whole, and beta = 1 selects the entire plane.
struct RegionLayout {
  std::size_t height = 0, width = 0, channels = 0;
  double beta = 0.0;
  std::vector<std::size_t> rows;  // centered row indices, ascending
  std::vector<std::size_t> cols;  // centered column indices, ascending

  /// Number of region entries: rows * cols * channels.
  std::size_t size() const { return rows.size() * cols.size() * channels; }
  /// Flat [h, w, c] index of region entry e (row-major over rows, cols, channels).
  std::size_t flat_index(std::size_t e) const;
  /// Region entry holding the negated frequency of entry e (same channel).
  std::size_t mirror_entry(std::size_t e) const;
  /// Binary [h, w] mask of the block.
  Tensor mask() const;

  friend bool operator==(const RegionLayout&, const RegionLayout&) = default;
};

/// Throws DomainError for beta outside (0, 1] or an invalid image geometry.
RegionLayout low_freq_layout(std::size_t height, std::size_t width, std::size_t channels,
                             double beta);

struct LowFreqRegion {
  RegionLayout layout;
  Tensor values;  // [layout.size()] amplitudes, region order
};

LowFreqRegion extract_low_freq(const Spectrum& spec, double beta);

/// Strictly positive, negation-symmetric amplitude multiplier over a region;
/// the multiplier is implicitly 1 outside the region.
struct PromptMultiplier {
  RegionLayout layout;
  Tensor values;  // [layout.size()]

  static PromptMultiplier identity(const RegionLayout& layout);
  /// Throws DomainError if any value is <= 0 or non-finite, or if p(u, v) and
  /// p(-u, -v) differ beyond rounding.
  void validate() const;
};

/// (v(e) + v(mirror(e))) / 2 for each region entry.
Tensor symmetrize(const Tensor& values, const RegionLayout& layout);

/// Multiplies the region amplitudes by p; phase and out-of-region amplitudes
/// are copied unchanged.
Spectrum apply_prompt(const Spectrum& spec, const PromptMultiplier& p);

/// ifft2(apply_prompt(fft2(img), p)).
Image prompted_image(const Image& img, const PromptMultiplier& p);

/// Differentiable batch version of prompting for already-transformed images.
/// `multipliers` is [n x layout.size()] and must already be symmetric and
/// positive; the result is [n x h*w*c], row b the prompted image of spectra[b].
/// Gradients flow to the multipliers only.
ad::Var prompted_images(std::span<const Spectrum* const> spectra, const RegionLayout& layout,
                        const ad::Var& multipliers);

/// Symmetrization as a graph op: 0.5 * (x + x[:, mirror]).
ad::Var symmetrize(const ad::Var& values, const RegionLayout& layout);

}  // namespace apex
