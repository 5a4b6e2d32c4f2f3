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

#ifndef BSC_MICROBATCH_ENGINE_HPP_
#define BSC_MICROBATCH_ENGINE_HPP_

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "bsc/encoders/encoder.hpp"
#include "bsc/numerics/tensor.hpp"
#include "bsc/shardsim/ledger.hpp"

namespace bsc::microbatch {

using encoders::EncoderNet;
using encoders::ParamGrads;

// Contrastive batching geometry. Each encoder walks the batch in K = B / M
// microbatches; a microbatch is spread over `replicas` devices of M / R rows.
struct BatchPlan {
  std::size_t batch = 0;
  std::size_t micro_img = 0;
  std::size_t micro_txt = 0;
  std::size_t replicas = 1;

  // Throws ConfigError unless M_img, M_txt divide B and R divides both.
  static BatchPlan make(std::size_t batch, std::size_t micro_img, std::size_t micro_txt,
                        std::size_t replicas = 1);
  void validate() const;
  std::size_t k_img() const { return batch / micro_img; }
  std::size_t k_txt() const { return batch / micro_txt; }
};

// B aligned pairs: row i of `images` goes with row i of `texts`.
struct PairBatch {
  Tensor images;  // [B x kappa]
  Tensor texts;   // [B x T x d] token sequences, or [B x d]

  std::size_t size() const { return images.rank() == 0 ? 0 : images.dim(0); }
  PairBatch slice(std::size_t begin, std::size_t end) const;
};

struct EmbeddingBuffers {
  Tensor x;  // [B x D]
  Tensor y;  // [B x D]
  std::vector<bool> x_filled;
  std::vector<bool> y_filled;
  Reservation hold;  // X and Y charged to the ledger while the buffers live
};

enum class Tower : std::uint8_t { kImage, kText };

struct EngineStats {
  std::size_t rows_forwarded_img = 0;
  std::size_t rows_forwarded_txt = 0;
  std::size_t forward_calls_img = 0;
  std::size_t forward_calls_txt = 0;
  std::size_t items_recomputed = 0;

  // Full passes over the batch per encoder; an embed-then-recompute step does two.
  double passes_img(std::size_t batch) const;
  double passes_txt(std::size_t batch) const;
};

struct EngineOptions {
  MemoryLedger* ledger = nullptr;
  // Tape policies for the re-forward phase; save-everything when unset.
  std::optional<encoders::TapePolicy> policy_img;
  std::optional<encoders::TapePolicy> policy_txt;
  encoders::WeightAccess* weights_img = nullptr;
  encoders::WeightAccess* weights_txt = nullptr;
  // A tower that is not trained is embedded once and never re-forwarded.
  bool train_img = true;
  bool train_txt = true;
};

// One yielded gradient. `grads` is c_i: K times the microbatch's share of the
// batch gradient, so the mean of the K yields is the batch gradient. With
// R >= 2 replicas, `replica_grads` holds d_1..d_R and their mean is c_i.
struct MicrobatchGrad {
  Tower tower = Tower::kImage;
  std::size_t index = 1;  // 1..K
  std::size_t count = 1;  // K
  ParamGrads grads;
  std::vector<ParamGrads> replica_grads;
};

using GradSink = std::function<void(const MicrobatchGrad&)>;

struct StepResult {
  double loss = 0.0;
  EngineStats stats;
};

// Embeds the batch microbatch by microbatch with no activations retained.
EmbeddingBuffers embed_phase(const EncoderNet& f, const EncoderNet& g, const PairBatch& batch,
                             const BatchPlan& plan, const EngineOptions& options = {},
                             EngineStats* stats = nullptr);

// One contrastive step: embed, compute the loss and dA once, then re-forward
// each microbatch with a tape and back-propagate its slice of dX / dY. Image
// yields come first (in microbatch order), then text yields.
StepResult microbatch_gradients(const EncoderNet& f, const EncoderNet& g, const PairBatch& batch,
                                const BatchPlan& plan, double temperature, const GradSink& sink,
                                const EngineOptions& options = {});

struct OracleResult {
  double loss = 0.0;
  ParamGrads grad_img;
  ParamGrads grad_txt;
};

// Whole-batch forward and backward with every activation kept.
OracleResult monolithic_oracle(const EncoderNet& f, const EncoderNet& g, const PairBatch& batch,
                               double temperature);

// Mean of the yields for one tower, accumulated in yield order.
struct GradAverager {
  ParamGrads img;
  ParamGrads txt;
  std::size_t seen_img = 0;
  std::size_t seen_txt = 0;

  void operator()(const MicrobatchGrad& m);
};

}  // namespace bsc::microbatch

#endif  // BSC_MICROBATCH_ENGINE_HPP_
