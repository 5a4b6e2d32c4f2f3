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

#ifndef BSC_THEORY_PROBE_HPP_
#define BSC_THEORY_PROBE_HPP_

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "bsc/encoders/encoder.hpp"
#include "bsc/numerics/tensor.hpp"

namespace bsc::theory {

using encoders::EncoderNet;

struct GapProbeConfig {
  std::size_t m = 1024;           // training pairs
  std::size_t batch = 32;         // B, texts per normalized train loss
  std::size_t test_texts = 4096;  // M, texts in the test-loss expectation
  std::size_t draws = 8;          // independent text batches averaged per train example
  double delta = 0.05;
  std::size_t kappa = 0;          // image input dimension; 0 = take from the image encoder
  std::size_t lipschitz_pairs = 100000;  // random pairs for the c9 slope estimate
  std::uint64_t seed = 0;

  void validate() const;
};

// -exp(s) / ((1/B) sum_k exp(s_k)), evaluated with a shared max shift.
double normalized_loss_from_scores(double positive, std::span<const double> others);

// Normalized train loss for one pair against texts yhat_1..yhat_B.
double normalized_train_loss(const EncoderNet& f, const EncoderNet& g, const Tensor& x,
                             const Tensor& y, const Tensor& train_texts);
// Normalized test loss with the expectation over ybar replaced by the mean
// over the given test texts.
double normalized_test_loss(const EncoderNet& f, const EncoderNet& g, const Tensor& x,
                            const Tensor& y, const Tensor& test_texts);

// Pairs for the probe. Train pairs are the sample S; test pairs are held out
// and supply E_{x,y}; the text pool supplies ybar_1..ybar_M.
struct GapData {
  Tensor train_images;
  Tensor train_texts;
  Tensor test_images;
  Tensor test_texts;
  Tensor text_pool;
};

struct GapEstimate {
  double gap = 0.0;
  double standard_error = 0.0;
  double train_mean = 0.0;
  double test_mean = 0.0;
};

// Embeddings of GapData, computed once so sweeps over B reuse them.
struct GapEmbeddings {
  Tensor train_x, train_y, test_x, test_y, pool_y;
};
GapEmbeddings embed_gap_data(const EncoderNet& f, const EncoderNet& g, const GapData& data);

// E_test[lbar_M] - E_S[lhat_B]. Every train example gets `draws` batches of B
// texts drawn iid (with replacement) from the training texts; draws are
// seeded from cfg.seed and nested across B, so sweeps share randomness.
GapEstimate empirical_gap(const GapEmbeddings& e, const GapProbeConfig& cfg);
GapEstimate empirical_gap(const EncoderNet& f, const EncoderNet& g, const GapProbeConfig& cfg,
                          const GapData& data);

struct NetNorms {
  std::vector<double> frobenius;  // M_l for every layer
  std::vector<double> last_rows;  // M_{L,k}
  double product_hidden = 1.0;    // prod_{l < L} M_l
  double row_sum = 0.0;           // sum_k M_{L,k}
  double row_rss = 0.0;           // sqrt(sum_k M_{L,k}^2)
};
NetNorms net_norms(const EncoderNet& net);

struct BoundReport {
  double c1 = 0, c2 = 0, c3 = 0, c4 = 0, c5 = 0, c6 = 0, c7 = 0, c8 = 0, c9 = 0;
  bool c9_is_estimate = true;  // max observed slope, a lower estimate of the constant
  NetNorms text_norms;         // G, depth L
  NetNorms image_norms;        // F, depth L'
  double expected_a = 0.0;     // E[A(x, y)]
  double q11 = 0, q12 = 0, q21 = 0, q22 = 0;
  double q1 = 0, q2 = 0;
  double rhs = 0.0;
  std::size_t m = 0, batch = 0, kappa = 0;
  double delta = 0.0;
  GapEstimate gap;
};

// Generalization bound assembled from measured constants. Throws PreconditionError
// unless both encoders use only ReLU / identity activations and no
// normalization layers.
BoundReport theorem1_bound(const EncoderNet& f, const EncoderNet& g, const GapData& data,
                           const GapProbeConfig& cfg);

// Pure assembly of the Q terms and the right-hand side from a report whose
// constants and norms are filled in.
void assemble_bound(BoundReport& r, std::size_t text_depth, std::size_t image_depth);

}  // namespace bsc::theory

#endif  // BSC_THEORY_PROBE_HPP_
