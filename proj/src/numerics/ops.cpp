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

#include "bsc/numerics/ops.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <string>

#include "bsc/errors.hpp"
#include "bsc/numerics/kernels.hpp"

namespace bsc {

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(what) + ": shape mismatch " + shape_string(a.shape()) +
                         " vs " + shape_string(b.shape()));
  }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul lhs");
  require_matrix(b, "matmul rhs");
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: inner dimensions differ " + shape_string(a.shape()) + " x " +
                         shape_string(b.shape()));
  }
  Tensor c({a.rows(), b.cols()});
  kernels::parallel::matmul(a.span(), b.span(), c.span(), a.rows(), a.cols(), b.cols());
  require_finite(c, "matmul");
  return c;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul_nt lhs");
  require_matrix(b, "matmul_nt rhs");
  if (a.cols() != b.cols()) {
    throw DimensionError("matmul_nt: inner dimensions differ " + shape_string(a.shape()) +
                         " x " + shape_string(b.shape()) + "^T");
  }
  Tensor c({a.rows(), b.rows()});
  kernels::parallel::matmul_nt(a.span(), b.span(), c.span(), a.rows(), a.cols(), b.rows());
  require_finite(c, "matmul_nt");
  return c;
}

Tensor matmul_tn(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul_tn lhs");
  require_matrix(b, "matmul_tn rhs");
  if (a.rows() != b.rows()) {
    throw DimensionError("matmul_tn: inner dimensions differ " + shape_string(a.shape()) +
                         "^T x " + shape_string(b.shape()));
  }
  Tensor c({a.cols(), b.cols()});
  kernels::parallel::matmul_tn(a.span(), b.span(), c.span(), a.rows(), a.cols(), b.cols());
  require_finite(c, "matmul_tn");
  return c;
}

Tensor transpose(const Tensor& m) {
  require_matrix(m, "transpose");
  Tensor t({m.cols(), m.rows()});
  for (std::size_t i = 0; i < m.rows(); ++i) {
    for (std::size_t j = 0; j < m.cols(); ++j) t.at(j, i) = m.at(i, j);
  }
  return t;
}

Tensor l2_normalize_rows(const Tensor& m, std::vector<double>* norms) {
  require_matrix(m, "l2_normalize_rows");
  Tensor out(m.shape());
  std::vector<double> local(m.rows());
  kernels::parallel::l2_normalize_rows(m.span(), out.span(), local, m.rows(), m.cols());
  for (std::size_t i = 0; i < m.rows(); ++i) {
    if (!(local[i] >= kDegenerateNorm)) {
      throw DegenerateEmbeddingError("row " + std::to_string(i) + " has norm " +
                                     std::to_string(local[i]) +
                                     "; cannot project onto the unit sphere");
    }
  }
  require_finite(out, "l2_normalize_rows");
  if (norms) *norms = std::move(local);
  return out;
}

double round_to_bf16(double x) {
  // A double carries 52 stored significand bits; bfloat16 keeps 7.
  constexpr int kDropped = 52 - 7;
  constexpr std::uint64_t kHalf = std::uint64_t{1} << (kDropped - 1);
  constexpr std::uint64_t kMask = (std::uint64_t{1} << kDropped) - 1;
  if (!std::isfinite(x) || x == 0.0) return x;
  std::uint64_t bits = std::bit_cast<std::uint64_t>(x);
  const std::uint64_t lsb = (bits >> kDropped) & 1U;
  // Carry into the exponent field is the correct rounding at a binade edge.
  bits += kHalf - 1 + lsb;
  bits &= ~kMask;
  return std::bit_cast<double>(bits);
}

Tensor round_to_bf16_storage(const Tensor& t) {
  Tensor out = t;
  for (auto& v : out.span()) v = round_to_bf16(v);
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Tensor out = a;
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] += b[i];
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  Tensor out = a;
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] -= b[i];
  return out;
}

Tensor scale(const Tensor& a, double s) {
  Tensor out = a;
  for (auto& v : out.span()) v *= s;
  return out;
}

void axpy_inplace(Tensor& y, double alpha, const Tensor& x) {
  require_same_shape(y, x, "axpy");
  for (std::size_t i = 0; i < y.numel(); ++i) y[i] += alpha * x[i];
}

double dot(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "dot");
  double s = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) s += a[i] * b[i];
  return s;
}

double frobenius_norm(const Tensor& a) { return std::sqrt(dot(a, a)); }

double relative_l2_error(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "relative_l2_error");
  double num = 0.0;
  double den = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    const double d = a[i] - b[i];
    num += d * d;
    den += b[i] * b[i];
  }
  if (num == 0.0) return 0.0;
  return std::sqrt(num) / std::max(std::sqrt(den), 1e-300);
}

double max_relative_error(const Tensor& a, const Tensor& b, double floor) {
  require_same_shape(a, b, "max_relative_error");
  double worst = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    const double err = std::abs(a[i] - b[i]) / std::max(std::abs(b[i]), floor);
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace bsc
