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

#include "apex/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "apex/errors.hpp"

namespace apex {

namespace {

int to_byte(double v) {
  return static_cast<int>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw FormatError("cannot open " + path + " for writing");
  out << text;
}

}  // namespace

std::string to_pnm(const Image& img) {
  const std::size_t c = img.channels();
  if (c != 1 && c != 3) throw ShapeError("pnm dump needs 1 or 3 channels");
  std::ostringstream os;
  os << (c == 1 ? "P2" : "P3") << '\n' << img.width() << ' ' << img.height() << "\n255\n";
  for (std::size_t y = 0; y < img.height(); ++y) {
    for (std::size_t x = 0; x < img.width(); ++x) {
      for (std::size_t ch = 0; ch < c; ++ch) {
        if (x || ch) os << ' ';
        os << to_byte(img.at(y, x, ch));
      }
    }
    os << '\n';
  }
  return os.str();
}

void write_pnm(const std::string& path, const Image& img) { write_text(path, to_pnm(img)); }

void write_heatmap_pgm(const std::string& path, const Tensor& m) {
  if (m.rank() != 2) throw ShapeError("heatmap needs a rank-2 tensor");
  const auto [lo_it, hi_it] = std::minmax_element(m.data().begin(), m.data().end());
  const double lo = *lo_it, span = *hi_it - *lo_it;
  std::ostringstream os;
  os << "P2\n" << m.dim(1) << ' ' << m.dim(0) << "\n255\n";
  for (std::size_t r = 0; r < m.dim(0); ++r) {
    for (std::size_t c = 0; c < m.dim(1); ++c) {
      if (c) os << ' ';
      os << to_byte(span > 0 ? (m.at(r, c) - lo) / span : 0.0);
    }
    os << '\n';
  }
  write_text(path, os.str());
}

}  // namespace apex
