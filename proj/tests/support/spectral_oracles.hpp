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

#include <cmath>
#include <complex>
#include <numbers>
#include <vector>

#include "apex/random.hpp"
#include "apex/spectral.hpp"

namespace apex::testing {

inline Image random_image(std::size_t h, std::size_t w, std::size_t c, Rng& rng) {
  std::vector<double> v(h * w * c);
  for (auto& x : v) x = uniform(rng, 0.0, 1.0);
  return Image(h, w, c, std::move(v));
}

inline Tensor random_weights(std::size_t n, Rng& rng) {
  Tensor t(Shape{n});
  for (auto& v : t.storage()) v = normal(rng);
  return t;
}

/// Direct O(N^2) double sum, written straight from the DFT definition and
/// indexed by signed frequency, so it shares no code with fft2. Output is in
/// the centered [h, w, c] layout.
inline std::vector<std::complex<double>> naive_centered_dft(const Image& img) {
  const auto h = static_cast<long>(img.height());
  const auto w = static_cast<long>(img.width());
  const std::size_t c = img.channels();
  std::vector<std::complex<double>> out(img.size());
  for (long u = -h / 2; u < h / 2; ++u)
    for (long v = -w / 2; v < w / 2; ++v)
      for (std::size_t ch = 0; ch < c; ++ch) {
        std::complex<double> acc = 0.0;
        for (long y = 0; y < h; ++y)
          for (long x = 0; x < w; ++x) {
            const double angle = -2.0 * std::numbers::pi *
                                 (static_cast<double>(u * y) / static_cast<double>(h) +
                                  static_cast<double>(v * x) / static_cast<double>(w));
            acc += img.at(static_cast<std::size_t>(y), static_cast<std::size_t>(x), ch) *
                   std::polar(1.0, angle);
          }
        const auto row = static_cast<std::size_t>(u + h / 2);
        const auto col = static_cast<std::size_t>(v + w / 2);
        out[(row * static_cast<std::size_t>(w) + col) * c + ch] = acc;
      }
  return out;
}

inline PromptMultiplier random_symmetric_prompt(const RegionLayout& layout, Rng& rng) {
  Tensor raw(Shape{layout.size()});
  for (auto& v : raw.storage()) v = std::exp(normal(rng, 0.0, 0.5));
  return {layout, symmetrize(raw, layout)};
}

}  // namespace apex::testing
