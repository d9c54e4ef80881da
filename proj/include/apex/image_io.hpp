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

// Plain-text PGM (P2) / PPM (P3) dumps for eyeballing images. Values are
// clamped to [0, 1] and scaled to [0, 255]; these files are lossy and never
// read back by the numeric pipeline.

#pragma once

#include <string>

#include "apex/spectral.hpp"
#include "apex/tensor.hpp"

namespace apex {

/// One channel -> PGM, three channels -> PPM. Other channel counts throw.
std::string to_pnm(const Image& img);
void write_pnm(const std::string& path, const Image& img);

/// Rank-2 tensor as a PGM heatmap, min..max mapped to 0..255.
void write_heatmap_pgm(const std::string& path, const Tensor& m);

}  // namespace apex
