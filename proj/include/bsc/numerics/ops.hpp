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

#ifndef BSC_NUMERICS_OPS_HPP_
#define BSC_NUMERICS_OPS_HPP_

#include <vector>

#include "bsc/numerics/tensor.hpp"

namespace bsc {

// Rows whose Euclidean norm falls below this are rejected by
// l2_normalize_rows instead of being divided through.
inline constexpr double kDegenerateNorm = 1e-30;

// c[i, j] = sum_p a[i, p] * b[p, j], summed in ascending p.
Tensor matmul(const Tensor& a, const Tensor& b);
// a * b^T and a^T * b with the same per-element ordering contract.
Tensor matmul_nt(const Tensor& a, const Tensor& b);
Tensor matmul_tn(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& m);

// Projects every row onto the unit sphere. When `norms` is non-null it
// receives the pre-normalization row norms.
Tensor l2_normalize_rows(const Tensor& m, std::vector<double>* norms = nullptr);

// Emulates bfloat16 storage: rounds the significand to 8 bits (7 stored)
// with round-to-nearest-even and widens back to double. The exponent range
// of double is kept, so no overflow to infinity at the float32 limit.
double round_to_bf16(double x);
Tensor round_to_bf16_storage(const Tensor& t);

// Elementwise helpers. Shapes must match exactly.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
void axpy_inplace(Tensor& y, double alpha, const Tensor& x);  // y += alpha * x

double dot(const Tensor& a, const Tensor& b);
double frobenius_norm(const Tensor& a);
// ||a - b||_2 / max(||b||_2, tiny); 0 when both are zero.
double relative_l2_error(const Tensor& a, const Tensor& b);
// max_i |a_i - b_i| / max(|b_i|, floor).
double max_relative_error(const Tensor& a, const Tensor& b, double floor = 1e-12);

}  // namespace bsc

#endif  // BSC_NUMERICS_OPS_HPP_
