/* Copyright 2026 The BSC Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#ifndef BSC_NUMERICS_KERNELS_HPP_
#define BSC_NUMERICS_KERNELS_HPP_

#include <cstddef>
#include <span>

// Raw row-major kernels. Every kernel exists twice: a serial reference and an
// OpenMP version that splits work over output rows (or columns). Each output
// element is produced by exactly one thread with the same ascending reduction
// order as the serial kernel, so the two are bitwise identical for any thread
// count. Tests hold the parallel kernels to that; bench/ compares their speed.
//
// Output buffers must not alias inputs.
namespace bsc::kernels {

#define BSC_KERNEL_DECLS                                                                   \
  /* c[n x m] = a[n x k] * b[k x m] */                                                     \
  void matmul(std::span<const double> a, std::span<const double> b, std::span<double> c,  \
              std::size_t n, std::size_t k, std::size_t m);                                \
  /* c[n x m] = a[n x k] * b[m x k]^T */                                                   \
  void matmul_nt(std::span<const double> a, std::span<const double> b,                    \
                 std::span<double> c, std::size_t n, std::size_t k, std::size_t m);        \
  /* c[n x m] = a[k x n]^T * b[k x m] */                                                   \
  void matmul_tn(std::span<const double> a, std::span<const double> b,                    \
                 std::span<double> c, std::size_t k, std::size_t n, std::size_t m);        \
  /* out = in / ||in_row||; norms[i] = ||in_row i||. No zero check. */                     \
  void l2_normalize_rows(std::span<const double> in, std::span<double> out,               \
                         std::span<double> norms, std::size_t n, std::size_t d);           \
  /* out[i] = log sum_j exp(a[i, j]), max-shifted */                                       \
  void row_logsumexp(std::span<const double> a, std::span<double> out, std::size_t n,     \
                     std::size_t m);                                                       \
  /* out[j] = log sum_i exp(a[i, j]), max-shifted */                                       \
  void col_logsumexp(std::span<const double> a, std::span<double> out, std::size_t n,     \
                     std::size_t m);

namespace serial {
BSC_KERNEL_DECLS
}  // namespace serial

namespace parallel {
BSC_KERNEL_DECLS
}  // namespace parallel

#undef BSC_KERNEL_DECLS

// Number of threads the parallel kernels use (1 when built without OpenMP).
int max_threads();

}  // namespace bsc::kernels

#endif  // BSC_NUMERICS_KERNELS_HPP_
