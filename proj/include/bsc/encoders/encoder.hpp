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

#ifndef BSC_ENCODERS_ENCODER_HPP_
#define BSC_ENCODERS_ENCODER_HPP_

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "bsc/numerics/rng.hpp"
#include "bsc/numerics/tensor.hpp"
#include "bsc/shardsim/ledger.hpp"

namespace bsc::encoders {

enum class Activation : std::uint8_t { kIdentity, kRelu };
enum class Norm : std::uint8_t { kNone, kLayerNorm, kBatchNorm };
enum class InputKind : std::uint8_t { kVectors, kTokenSequences };

inline constexpr double kNormEpsilon = 1e-5;

struct LayerSpec {
  std::size_t out = 0;
  Activation activation = Activation::kIdentity;
  Norm norm = Norm::kNone;
  // Small bottleneck layer: weights replicated, outputs always recomputed.
  bool se_like = false;
};

struct Layer {
  Tensor weight;  // [out x in]
  Tensor gain;    // [out] for layernorm, empty otherwise
  Activation activation = Activation::kIdentity;
  Norm norm = Norm::kNone;
  bool se_like = false;

  std::size_t in_dim() const { return weight.dim(1); }
  std::size_t out_dim() const { return weight.dim(0); }
};

// Feed-forward encoder ending in a unit-sphere projection. Token-sequence
// encoders mean-pool their [n x T x d] input before the first layer.
//
// Every net carries an identity and a generation counter; mutable parameter
// access bumps the generation so stale activation tapes are detected.
class EncoderNet {
 public:
  EncoderNet(std::size_t input_dim, std::vector<LayerSpec> specs, InputKind kind, Rng& rng);

  // `depth` layers: depth-1 hidden layers of `width` with ReLU and
  // `hidden_norm`, then a linear projection to `embed_dim`.
  static EncoderNet mlp(std::size_t input_dim, std::size_t width, std::size_t depth,
                        std::size_t embed_dim, Norm hidden_norm, InputKind kind, Rng& rng);

  EncoderNet(const EncoderNet& other);
  EncoderNet& operator=(const EncoderNet& other);
  EncoderNet(EncoderNet&&) noexcept = default;
  EncoderNet& operator=(EncoderNet&&) noexcept = default;

  std::size_t input_dim() const { return input_dim_; }
  std::size_t depth() const { return layers_.size(); }
  std::size_t embed_dim() const { return layers_.back().out_dim(); }
  InputKind input_kind() const { return kind_; }
  const std::vector<Layer>& layers() const { return layers_; }
  const Layer& layer(std::size_t l) const { return layers_.at(l); }
  bool has_batch_coupling() const;

  // Parameters in a fixed order: per layer its weight, then its gain.
  std::size_t num_params() const { return param_slots_.size(); }
  const Tensor& param(std::size_t i) const;
  Tensor& mutable_param(std::size_t i);
  std::string param_name(std::size_t i) const;
  // Layer owning parameter i and whether it is the layer's gain vector.
  std::pair<std::size_t, bool> param_location(std::size_t i) const { return param_slots_.at(i); }
  std::size_t num_scalars() const;

  std::uint64_t id() const { return id_; }
  std::uint64_t generation() const { return generation_; }

 private:
  void index_params();

  std::size_t input_dim_;
  InputKind kind_;
  std::vector<Layer> layers_;
  std::vector<std::pair<std::size_t, bool>> param_slots_;
  std::uint64_t id_;
  std::uint64_t generation_ = 0;
};

using ParamGrads = std::vector<Tensor>;

ParamGrads zero_grads(const EncoderNet& net);

// Positions in the per-layer computation whose outputs can be kept.
enum class Stage : std::uint8_t { kDense, kNorm, kActivation };

struct LayerSave {
  bool dense = true;
  bool norm = true;
  bool activation = true;
};

struct TapePolicy {
  std::vector<LayerSave> layers;

  static TapePolicy save_all(const EncoderNet& net);
  static TapePolicy recompute_all(const EncoderNet& net);
};

// Where a pass obtains weight matrices. The default reads the net directly;
// the shard simulator gathers shards on acquire and discards on release.
class WeightAccess {
 public:
  virtual ~WeightAccess() = default;
  virtual const Tensor& acquire(std::size_t layer) = 0;
  virtual void release(std::size_t layer) = 0;
};

struct PassStats {
  std::size_t rows_forwarded = 0;   // rows pushed through a forward pass
  std::size_t items_recomputed = 0;  // stage outputs rebuilt during backward
};

struct PassOptions {
  MemoryLedger* ledger = nullptr;
  WeightAccess* weights = nullptr;
  PassStats* stats = nullptr;
  // Called with (item index, tensor) for every stage output backward reads.
  // Item 0 is the (pooled) input; see ActivationTape::item_count.
  std::function<void(std::size_t, const Tensor&)> on_item_used;
};

// Stage outputs retained by a forward pass for the matching backward pass.
// The (pooled) input is always retained. Consumed by backward.
class ActivationTape {
 public:
  explicit ActivationTape(TapePolicy policy) : policy_(std::move(policy)) {}

  const TapePolicy& policy() const { return policy_; }
  bool populated() const { return populated_; }
  std::size_t rows() const { return rows_; }
  // Number of saved stage outputs, excluding the input.
  std::size_t saved_count() const { return items_.size() - items_.count(0); }
  const Tensor* saved_item(std::size_t item) const;

  // Count of stage outputs in a net, including the input item.
  static std::size_t item_count(const EncoderNet& net);

 private:
  friend Tensor forward(const EncoderNet&, const Tensor&, ActivationTape*, const PassOptions&);
  friend ParamGrads backward(const EncoderNet&, ActivationTape&, const Tensor&,
                             const PassOptions&);

  TapePolicy policy_;
  bool populated_ = false;
  std::uint64_t net_id_ = 0;
  std::uint64_t generation_ = 0;
  std::size_t rows_ = 0;
  std::map<std::size_t, TrackedTensor> items_;  // item index -> tensor (0 = input)
};

// Computes unit-norm embeddings [n x D]. With a tape, stage outputs are kept
// per its policy; without one nothing survives the call. Activation memory is
// charged to options.ledger; the returned embeddings are not.
Tensor forward(const EncoderNet& net, const Tensor& inputs, ActivationTape* tape,
               const PassOptions& options = {});

// Gradients of sum_ij output_grad[i, j] * out[i, j] w.r.t. every parameter,
// through the sphere projection. Recomputes stage outputs the tape dropped.
ParamGrads backward(const EncoderNet& net, ActivationTape& tape, const Tensor& output_grad,
                    const PassOptions& options = {});

// Mean-pools a [n x T x d] token tensor to [n x d]; passes [n x d] through.
Tensor pool_inputs(const EncoderNet& net, const Tensor& inputs);

// Per-example activation peaks of one pass, measured by running the pass on
// a single example with a private ledger. Every activation buffer is
// rows x width, so a pass over n rows peaks at exactly n times these.
struct PassProfile {
  std::int64_t forward_untaped = 0;   // forward with no tape
  std::int64_t forward_taped = 0;     // forward with tape (peak)
  std::int64_t tape_retained = 0;     // live after the taped forward returns
  std::int64_t backward = 0;          // peak during backward, tape included
  std::int64_t forward_backward = 0;  // max(forward_taped, backward)
};

PassProfile profile_pass(const EncoderNet& net, const TapePolicy& policy,
                         const Tensor& example_row);

// Softmax classification head used to pretrain the image encoder.
struct ClassHead {
  Tensor weight;  // [C x D]

  ClassHead(std::size_t num_classes, std::size_t embed_dim, Rng& rng);
  std::size_t num_classes() const { return weight.dim(0); }
};

struct ClassifyResult {
  double loss = 0.0;
  Tensor head_grad;       // [C x D]
  Tensor embedding_grad;  // [n x D]
};

// Mean softmax cross-entropy of logits = embeddings * W^T.
ClassifyResult classify_loss_grad(const ClassHead& head, const Tensor& embeddings,
                                  const std::vector<std::size_t>& labels);
Tensor class_logits(const ClassHead& head, const Tensor& embeddings);

}  // namespace bsc::encoders

#endif  // BSC_ENCODERS_ENCODER_HPP_
