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

// Data-parallel inner loops. Every kernel exists twice: a serial reference in
// `kernels::serial` and an OpenMP version in `kernels::parallel`. Both
// variants use the same per-element summation order, so their outputs are
// bit-identical; the parallel one only splits the outer loop across threads.
// The unqualified `kernels::` entry points dispatch to the parallel variant.

#pragma once

#include <complex>
#include <cstddef>
#include <span>

namespace apex::kernels {

using cplx = std::complex<double>;

// Row-major GEMM variants. Output is overwritten, not accumulated.
//   nn: C[m x n] = A[m x k]   * B[k x n]
//   nt: C[m x n] = A[m x k]   * B[n x k]^T
//   tn: C[m x n] = A[k x m]^T * B[k x n]
//
// dft2: in-place unnormalized 2-D DFT of an h x w complex plane, sign -1 for
// the forward transform and +1 for the inverse.
//
// box_blur: mean over the (2r+1)^2 window truncated at the image border.
// box_blur_adjoint is its transpose, used for backpropagation.

namespace serial {
void gemm_nn(std::span<const double> a, std::span<const double> b,
             std::span<double> c, std::size_t m, std::size_t k, std::size_t n);
void gemm_nt(std::span<const double> a, std::span<const double> b,
             std::span<double> c, std::size_t m, std::size_t k, std::size_t n);
void gemm_tn(std::span<const double> a, std::span<const double> b,
             std::span<double> c, std::size_t m, std::size_t k, std::size_t n);
void dft2(std::span<cplx> plane, std::size_t h, std::size_t w, int sign);
void box_blur(std::span<const double> in, std::span<double> out, std::size_t h,
              std::size_t w, int radius);
void box_blur_adjoint(std::span<const double> grad_out, std::span<double> grad_in,
                      std::size_t h, std::size_t w, int radius);
}  // namespace serial

namespace parallel {
void gemm_nn(std::span<const double> a, std::span<const double> b,
             std::span<double> c, std::size_t m, std::size_t k, std::size_t n);
void gemm_nt(std::span<const double> a, std::span<const double> b,
             std::span<double> c, std::size_t m, std::size_t k, std::size_t n);
void gemm_tn(std::span<const double> a, std::span<const double> b,
             std::span<double> c, std::size_t m, std::size_t k, std::size_t n);
void dft2(std::span<cplx> plane, std::size_t h, std::size_t w, int sign);
void box_blur(std::span<const double> in, std::span<double> out, std::size_t h,
              std::size_t w, int radius);
void box_blur_adjoint(std::span<const double> grad_out, std::span<double> grad_in,
                      std::size_t h, std::size_t w, int radius);
}  // namespace parallel

using parallel::box_blur;
using parallel::box_blur_adjoint;
using parallel::dft2;
using parallel::gemm_nn;
using parallel::gemm_nt;
using parallel::gemm_tn;

/// In-place 1-D DFT of `n` strided complex values. Radix-2 when n is a
/// power of two, direct summation otherwise.
void dft1(cplx* data, std::size_t n, std::size_t stride, int sign);

/// Number of OpenMP threads available (1 when built without OpenMP).
int max_threads();

}  // namespace apex::kernels
