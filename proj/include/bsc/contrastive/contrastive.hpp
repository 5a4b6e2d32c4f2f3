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

#ifndef BSC_CONTRASTIVE_CONTRASTIVE_HPP_
#define BSC_CONTRASTIVE_CONTRASTIVE_HPP_

#include <cstddef>

#include "bsc/numerics/tensor.hpp"

namespace bsc::contrastive {

// a[i, j] = <x_i, y_j> / temperature. Row i of X is paired with row i of Y.
struct SimilarityMatrix {
  Tensor a;  // [B x B]
  double temperature = 1.0;

  std::size_t batch() const { return a.rows(); }
};

// Embeddings are expected on the unit sphere (entries then lie in
// [-1/tau, 1/tau]) but this is not enforced, so finite-difference checks can
// perturb them freely.
SimilarityMatrix similarity(const Tensor& x, const Tensor& y, double temperature);

// Mean of the row-wise and column-wise softmax cross-entropies with the
// diagonal as the positive pair.
double contrastive_loss(const SimilarityMatrix& s);

// d loss / d a. Row-term rows and column-term columns each sum to zero.
Tensor loss_grad_wrt_A(const SimilarityMatrix& s);

struct EmbeddingGrads {
  Tensor dx;  // [B x D]
  Tensor dy;  // [B x D]
};

// dX = dA * Y / tau, dY = dA^T * X / tau.
EmbeddingGrads grad_to_embeddings(const SimilarityMatrix& s, const Tensor& x, const Tensor& y,
                                  const Tensor& da);

}  // namespace bsc::contrastive

#endif  // BSC_CONTRASTIVE_CONTRASTIVE_HPP_
