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

#include "apex/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace apex::kernels {

namespace {

// Below this many multiply-adds a parallel region costs more than it saves.
constexpr std::size_t kParallelWork = 1 << 15;

bool is_pow2(std::size_t n) { return n && !(n & (n - 1)); }

cplx twiddle(std::size_t num, std::size_t den, int sign) {
  const double angle = sign * 2.0 * std::numbers::pi * static_cast<double>(num) /
                       static_cast<double>(den);
  return {std::cos(angle), std::sin(angle)};
}

void fft_pow2(std::vector<cplx>& a, int sign) {
  const std::size_t n = a.size();
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const std::size_t half = len / 2;
    for (std::size_t start = 0; start < n; start += len) {
      for (std::size_t k = 0; k < half; ++k) {
        const cplx w = twiddle(k, len, sign);
        const cplx u = a[start + k];
        const cplx v = a[start + k + half] * w;
        a[start + k] = u + v;
        a[start + k + half] = u - v;
      }
    }
  }
}

void dft_direct(std::vector<cplx>& a, int sign) {
  const std::size_t n = a.size();
  std::vector<cplx> out(n);
  for (std::size_t k = 0; k < n; ++k) {
    cplx acc = 0.0;
    for (std::size_t j = 0; j < n; ++j) acc += a[j] * twiddle((j * k) % n, n, sign);
    out[k] = acc;
  }
  a.swap(out);
}

// Shared row kernels: both variants call these with identical arguments, so
// each output element sees the same floating-point operation sequence.

void gemm_nn_row(const double* a, const double* b, double* c, std::size_t i,
                 std::size_t k, std::size_t n) {
  double* ci = c + i * n;
  std::fill(ci, ci + n, 0.0);
  for (std::size_t p = 0; p < k; ++p) {
    const double aip = a[i * k + p];
    const double* bp = b + p * n;
    for (std::size_t j = 0; j < n; ++j) ci[j] += aip * bp[j];
  }
}

void gemm_nt_row(const double* a, const double* b, double* c, std::size_t i,
                 std::size_t k, std::size_t n) {
  const double* ai = a + i * k;
  for (std::size_t j = 0; j < n; ++j) {
    const double* bj = b + j * k;
    double acc = 0.0;
    for (std::size_t p = 0; p < k; ++p) acc += ai[p] * bj[p];
    c[i * n + j] = acc;
  }
}

void gemm_tn_row(const double* a, const double* b, double* c, std::size_t i,
                 std::size_t m, std::size_t k, std::size_t n) {
  double* ci = c + i * n;
  std::fill(ci, ci + n, 0.0);
  for (std::size_t p = 0; p < k; ++p) {
    const double api = a[p * m + i];
    if (api == 0.0) continue;
    const double* bp = b + p * n;
    for (std::size_t j = 0; j < n; ++j) ci[j] += api * bp[j];
  }
}

void blur_row(const double* in, double* out, std::size_t y, std::size_t h,
              std::size_t w, int r) {
  const auto ih = static_cast<long>(h);
  const auto iw = static_cast<long>(w);
  const long y0 = std::max(0L, static_cast<long>(y) - r);
  const long y1 = std::min(ih - 1, static_cast<long>(y) + r);
  for (long x = 0; x < iw; ++x) {
    const long x0 = std::max(0L, x - r);
    const long x1 = std::min(iw - 1, x + r);
    double acc = 0.0;
    for (long yy = y0; yy <= y1; ++yy)
      for (long xx = x0; xx <= x1; ++xx) acc += in[yy * iw + xx];
    out[y * w + static_cast<std::size_t>(x)] =
        acc / static_cast<double>((y1 - y0 + 1) * (x1 - x0 + 1));
  }
}

// Gather form of the adjoint: input pixel (y, x) collects g(q)/count(q) from
// every output pixel q whose window covers it. Windows are symmetric, so the
// covering outputs are exactly the window around (y, x).
void blur_adjoint_row(const double* g, double* out, std::size_t y, std::size_t h,
                      std::size_t w, int r) {
  const auto ih = static_cast<long>(h);
  const auto iw = static_cast<long>(w);
  auto count = [&](long qy, long qx) {
    const long ny = std::min(ih - 1, qy + r) - std::max(0L, qy - r) + 1;
    const long nx = std::min(iw - 1, qx + r) - std::max(0L, qx - r) + 1;
    return static_cast<double>(ny * nx);
  };
  const long y0 = std::max(0L, static_cast<long>(y) - r);
  const long y1 = std::min(ih - 1, static_cast<long>(y) + r);
  for (long x = 0; x < iw; ++x) {
    const long x0 = std::max(0L, x - r);
    const long x1 = std::min(iw - 1, x + r);
    double acc = 0.0;
    for (long qy = y0; qy <= y1; ++qy)
      for (long qx = x0; qx <= x1; ++qx) acc += g[qy * iw + qx] / count(qy, qx);
    out[y * w + static_cast<std::size_t>(x)] = acc;
  }
}

void dft_rows(cplx* plane, std::size_t row, std::size_t w, int sign) {
  dft1(plane + row * w, w, 1, sign);
}

void dft_cols(cplx* plane, std::size_t col, std::size_t h, std::size_t w, int sign) {
  dft1(plane + col, h, w, sign);
}

}  // namespace

void dft1(cplx* data, std::size_t n, std::size_t stride, int sign) {
  std::vector<cplx> line(n);
  for (std::size_t i = 0; i < n; ++i) line[i] = data[i * stride];
  if (is_pow2(n)) {
    fft_pow2(line, sign);
  } else {
    dft_direct(line, sign);
  }
  for (std::size_t i = 0; i < n; ++i) data[i * stride] = line[i];
}

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

namespace serial {

void gemm_nn(std::span<const double> a, std::span<const double> b,
             std::span<double> c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) gemm_nn_row(a.data(), b.data(), c.data(), i, k, n);
}

void gemm_nt(std::span<const double> a, std::span<const double> b,
             std::span<double> c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) gemm_nt_row(a.data(), b.data(), c.data(), i, k, n);
}

void gemm_tn(std::span<const double> a, std::span<const double> b,
             std::span<double> c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i)
    gemm_tn_row(a.data(), b.data(), c.data(), i, m, k, n);
}

void dft2(std::span<cplx> plane, std::size_t h, std::size_t w, int sign) {
  for (std::size_t r = 0; r < h; ++r) dft_rows(plane.data(), r, w, sign);
  for (std::size_t c = 0; c < w; ++c) dft_cols(plane.data(), c, h, w, sign);
}

void box_blur(std::span<const double> in, std::span<double> out, std::size_t h,
              std::size_t w, int radius) {
  for (std::size_t y = 0; y < h; ++y) blur_row(in.data(), out.data(), y, h, w, radius);
}

void box_blur_adjoint(std::span<const double> grad_out, std::span<double> grad_in,
                      std::size_t h, std::size_t w, int radius) {
  for (std::size_t y = 0; y < h; ++y)
    blur_adjoint_row(grad_out.data(), grad_in.data(), y, h, w, radius);
}

}  // namespace serial

namespace parallel {

void gemm_nn(std::span<const double> a, std::span<const double> b,
             std::span<double> c, std::size_t m, std::size_t k, std::size_t n) {
  const auto rows = static_cast<long>(m);
#pragma omp parallel for schedule(static) if (m * k * n > kParallelWork)
  for (long i = 0; i < rows; ++i)
    gemm_nn_row(a.data(), b.data(), c.data(), static_cast<std::size_t>(i), k, n);
}

void gemm_nt(std::span<const double> a, std::span<const double> b,
             std::span<double> c, std::size_t m, std::size_t k, std::size_t n) {
  const auto rows = static_cast<long>(m);
#pragma omp parallel for schedule(static) if (m * k * n > kParallelWork)
  for (long i = 0; i < rows; ++i)
    gemm_nt_row(a.data(), b.data(), c.data(), static_cast<std::size_t>(i), k, n);
}

void gemm_tn(std::span<const double> a, std::span<const double> b,
             std::span<double> c, std::size_t m, std::size_t k, std::size_t n) {
  const auto rows = static_cast<long>(m);
#pragma omp parallel for schedule(static) if (m * k * n > kParallelWork)
  for (long i = 0; i < rows; ++i)
    gemm_tn_row(a.data(), b.data(), c.data(), static_cast<std::size_t>(i), m, k, n);
}

void dft2(std::span<cplx> plane, std::size_t h, std::size_t w, int sign) {
  const bool big = h * w * (h + w) > kParallelWork;
  const auto ih = static_cast<long>(h);
  const auto iw = static_cast<long>(w);
#pragma omp parallel if (big)
  {
#pragma omp for schedule(static)
    for (long r = 0; r < ih; ++r)
      dft_rows(plane.data(), static_cast<std::size_t>(r), w, sign);
#pragma omp for schedule(static)
    for (long c = 0; c < iw; ++c)
      dft_cols(plane.data(), static_cast<std::size_t>(c), h, w, sign);
  }
}

void box_blur(std::span<const double> in, std::span<double> out, std::size_t h,
              std::size_t w, int radius) {
  const auto ih = static_cast<long>(h);
  const std::size_t win = static_cast<std::size_t>((2 * radius + 1) * (2 * radius + 1));
#pragma omp parallel for schedule(static) if (h * w * win > kParallelWork)
  for (long y = 0; y < ih; ++y)
    blur_row(in.data(), out.data(), static_cast<std::size_t>(y), h, w, radius);
}

void box_blur_adjoint(std::span<const double> grad_out, std::span<double> grad_in,
                      std::size_t h, std::size_t w, int radius) {
  const auto ih = static_cast<long>(h);
  const std::size_t win = static_cast<std::size_t>((2 * radius + 1) * (2 * radius + 1));
#pragma omp parallel for schedule(static) if (h * w * win > kParallelWork)
  for (long y = 0; y < ih; ++y)
    blur_adjoint_row(grad_out.data(), grad_in.data(), static_cast<std::size_t>(y), h,
                     w, radius);
}

}  // namespace parallel

}  // namespace apex::kernels
