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

#include "bsc/numerics/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace bsc::kernels {

namespace {

// Element bodies shared by both variants so the arithmetic cannot drift.

inline void matmul_row(const double* a, const double* b, double* c, std::size_t i,
                       std::size_t k, std::size_t m) {
  double* ci = c + i * m;
  std::fill(ci, ci + m, 0.0);
  const double* ai = a + i * k;
  for (std::size_t p = 0; p < k; ++p) {
    const double aip = ai[p];
    const double* bp = b + p * m;
    for (std::size_t j = 0; j < m; ++j) ci[j] += aip * bp[j];
  }
}

inline void matmul_nt_row(const double* a, const double* b, double* c, std::size_t i,
                          std::size_t k, std::size_t m) {
  const double* ai = a + i * k;
  for (std::size_t j = 0; j < m; ++j) {
    const double* bj = b + j * k;
    double s = 0.0;
    for (std::size_t p = 0; p < k; ++p) s += ai[p] * bj[p];
    c[i * m + j] = s;
  }
}

inline void matmul_tn_row(const double* a, const double* b, double* c, std::size_t i,
                          std::size_t k, std::size_t n, std::size_t m) {
  double* ci = c + i * m;
  std::fill(ci, ci + m, 0.0);
  for (std::size_t p = 0; p < k; ++p) {
    const double api = a[p * n + i];
    const double* bp = b + p * m;
    for (std::size_t j = 0; j < m; ++j) ci[j] += api * bp[j];
  }
}

inline void normalize_row(const double* in, double* out, double* norms, std::size_t i,
                          std::size_t d) {
  const double* r = in + i * d;
  double ss = 0.0;
  for (std::size_t j = 0; j < d; ++j) ss += r[j] * r[j];
  const double norm = std::sqrt(ss);
  norms[i] = norm;
  double* o = out + i * d;
  for (std::size_t j = 0; j < d; ++j) o[j] = r[j] / norm;
}

// Strided log-sum-exp over `len` entries starting at `base`.
inline double logsumexp_strided(const double* base, std::size_t len, std::size_t stride) {
  if (len == 0) return -std::numeric_limits<double>::infinity();
  double mx = base[0];
  for (std::size_t t = 1; t < len; ++t) mx = std::max(mx, base[t * stride]);
  double s = 0.0;
  for (std::size_t t = 0; t < len; ++t) s += std::exp(base[t * stride] - mx);
  return mx + std::log(s);
}

using Index = std::ptrdiff_t;

}  // namespace

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

namespace serial {

void matmul(std::span<const double> a, std::span<const double> b, std::span<double> c,
            std::size_t n, std::size_t k, std::size_t m) {
  for (std::size_t i = 0; i < n; ++i) matmul_row(a.data(), b.data(), c.data(), i, k, m);
}

void matmul_nt(std::span<const double> a, std::span<const double> b, std::span<double> c,
               std::size_t n, std::size_t k, std::size_t m) {
  for (std::size_t i = 0; i < n; ++i) matmul_nt_row(a.data(), b.data(), c.data(), i, k, m);
}

void matmul_tn(std::span<const double> a, std::span<const double> b, std::span<double> c,
               std::size_t k, std::size_t n, std::size_t m) {
  for (std::size_t i = 0; i < n; ++i) matmul_tn_row(a.data(), b.data(), c.data(), i, k, n, m);
}

void l2_normalize_rows(std::span<const double> in, std::span<double> out,
                       std::span<double> norms, std::size_t n, std::size_t d) {
  for (std::size_t i = 0; i < n; ++i) normalize_row(in.data(), out.data(), norms.data(), i, d);
}

void row_logsumexp(std::span<const double> a, std::span<double> out, std::size_t n,
                   std::size_t m) {
  for (std::size_t i = 0; i < n; ++i) out[i] = logsumexp_strided(a.data() + i * m, m, 1);
}

void col_logsumexp(std::span<const double> a, std::span<double> out, std::size_t n,
                   std::size_t m) {
  for (std::size_t j = 0; j < m; ++j) out[j] = logsumexp_strided(a.data() + j, n, m);
}

}  // namespace serial

namespace parallel {

void matmul(std::span<const double> a, std::span<const double> b, std::span<double> c,
            std::size_t n, std::size_t k, std::size_t m) {
#pragma omp parallel for schedule(static)
  for (Index i = 0; i < static_cast<Index>(n); ++i) {
    matmul_row(a.data(), b.data(), c.data(), static_cast<std::size_t>(i), k, m);
  }
}

void matmul_nt(std::span<const double> a, std::span<const double> b, std::span<double> c,
               std::size_t n, std::size_t k, std::size_t m) {
#pragma omp parallel for schedule(static)
  for (Index i = 0; i < static_cast<Index>(n); ++i) {
    matmul_nt_row(a.data(), b.data(), c.data(), static_cast<std::size_t>(i), k, m);
  }
}

void matmul_tn(std::span<const double> a, std::span<const double> b, std::span<double> c,
               std::size_t k, std::size_t n, std::size_t m) {
#pragma omp parallel for schedule(static)
  for (Index i = 0; i < static_cast<Index>(n); ++i) {
    matmul_tn_row(a.data(), b.data(), c.data(), static_cast<std::size_t>(i), k, n, m);
  }
}

void l2_normalize_rows(std::span<const double> in, std::span<double> out,
                       std::span<double> norms, std::size_t n, std::size_t d) {
#pragma omp parallel for schedule(static)
  for (Index i = 0; i < static_cast<Index>(n); ++i) {
    normalize_row(in.data(), out.data(), norms.data(), static_cast<std::size_t>(i), d);
  }
}

void row_logsumexp(std::span<const double> a, std::span<double> out, std::size_t n,
                   std::size_t m) {
#pragma omp parallel for schedule(static)
  for (Index i = 0; i < static_cast<Index>(n); ++i) {
    out[i] = logsumexp_strided(a.data() + i * m, m, 1);
  }
}

void col_logsumexp(std::span<const double> a, std::span<double> out, std::size_t n,
                   std::size_t m) {
#pragma omp parallel for schedule(static)
  for (Index j = 0; j < static_cast<Index>(m); ++j) {
    out[j] = logsumexp_strided(a.data() + j, n, m);
  }
}

}  // namespace parallel

}  // namespace bsc::kernels
