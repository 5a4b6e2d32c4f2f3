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

#include "bsc/contrastive/contrastive.hpp"

#include <cmath>
#include <string>
#include <vector>

#include "bsc/errors.hpp"
#include "bsc/numerics/kernels.hpp"
#include "bsc/numerics/ops.hpp"

namespace bsc::contrastive {

namespace {

void require_square(const SimilarityMatrix& s) {
  require_matrix(s.a, "similarity matrix");
  if (s.a.rows() != s.a.cols() || s.a.rows() == 0) {
    throw DimensionError("similarity matrix must be square and non-empty, got " +
                         shape_string(s.a.shape()));
  }
  if (!(s.temperature > 0.0)) throw ConfigError("temperature must be positive");
}

struct LogSumExps {
  std::vector<double> rows;
  std::vector<double> cols;
};

LogSumExps log_sum_exps(const Tensor& a) {
  const std::size_t b = a.rows();
  LogSumExps l{std::vector<double>(b), std::vector<double>(b)};
  kernels::parallel::row_logsumexp(a.span(), l.rows, b, b);
  kernels::parallel::col_logsumexp(a.span(), l.cols, b, b);
  return l;
}

}  // namespace

SimilarityMatrix similarity(const Tensor& x, const Tensor& y, double temperature) {
  if (!(temperature > 0.0)) {
    throw ConfigError("temperature must be positive, got " + std::to_string(temperature));
  }
  require_matrix(x, "similarity X");
  require_matrix(y, "similarity Y");
  if (x.shape() != y.shape()) {
    throw DimensionError("X and Y must have the same shape, got " + shape_string(x.shape()) +
                         " and " + shape_string(y.shape()));
  }
  SimilarityMatrix s{matmul_nt(x, y), temperature};
  const double inv = 1.0 / temperature;
  for (auto& v : s.a.span()) v *= inv;
  return s;
}

double contrastive_loss(const SimilarityMatrix& s) {
  require_square(s);
  const std::size_t b = s.batch();
  const LogSumExps l = log_sum_exps(s.a);
  double row = 0.0;
  double col = 0.0;
  for (std::size_t i = 0; i < b; ++i) {
    row += l.rows[i] - s.a.at(i, i);
    col += l.cols[i] - s.a.at(i, i);
  }
  const double inv_b = 1.0 / static_cast<double>(b);
  return 0.5 * (row * inv_b + col * inv_b);
}

Tensor loss_grad_wrt_A(const SimilarityMatrix& s) {
  require_square(s);
  const std::size_t b = s.batch();
  const LogSumExps l = log_sum_exps(s.a);
  const double w = 0.5 / static_cast<double>(b);
  Tensor da({b, b});
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t j = 0; j < b; ++j) {
      const double row_soft = std::exp(s.a.at(i, j) - l.rows[i]);
      const double col_soft = std::exp(s.a.at(i, j) - l.cols[j]);
      const double eye = i == j ? 1.0 : 0.0;
      da.at(i, j) = w * (row_soft - eye) + w * (col_soft - eye);
    }
  }
  return da;
}

EmbeddingGrads grad_to_embeddings(const SimilarityMatrix& s, const Tensor& x, const Tensor& y,
                                  const Tensor& da) {
  require_square(s);
  const std::size_t b = s.batch();
  if (x.rank() != 2 || y.shape() != x.shape() || x.rows() != b) {
    throw DimensionError("embeddings " + shape_string(x.shape()) + " / " +
                         shape_string(y.shape()) + " do not match a batch of " +
                         std::to_string(b));
  }
  if (da.shape() != s.a.shape()) {
    throw DimensionError("dA shape " + shape_string(da.shape()) + " does not match A");
  }
  const double inv = 1.0 / s.temperature;
  EmbeddingGrads g{matmul(da, y), matmul_tn(da, x)};
  for (auto& v : g.dx.span()) v *= inv;
  for (auto& v : g.dy.span()) v *= inv;
  return g;
}

}  // namespace bsc::contrastive
