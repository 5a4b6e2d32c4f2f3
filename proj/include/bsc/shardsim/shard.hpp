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

#ifndef BSC_SHARDSIM_SHARD_HPP_
#define BSC_SHARDSIM_SHARD_HPP_

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "bsc/encoders/encoder.hpp"
#include "bsc/numerics/tensor.hpp"
#include "bsc/optim/optim.hpp"
#include "bsc/shardsim/ledger.hpp"

namespace bsc::shardsim {

// A tensor split into contiguous slices along one axis, one per virtual
// core, or replicated whole on every core.
struct ShardedWeight {
  Shape full_shape;
  std::size_t axis = 0;
  std::vector<Tensor> shards;
  bool replicated = false;

  std::size_t cores() const { return shards.size(); }
  // Elements one core stores.
  std::size_t shard_elements() const { return shards.empty() ? 0 : shards.front().numel(); }
  std::size_t full_elements() const { return shape_numel(full_shape); }
};

// Throws ShardPlanError when the axis length is not divisible by `cores`.
ShardedWeight shard(const Tensor& weight, std::size_t cores, std::size_t axis);
ShardedWeight replicate(const Tensor& weight, std::size_t cores);
// Concatenates shards in core order; for replicated weights returns core 0's copy.
Tensor concat(const ShardedWeight& sw);

// Gathers the full weight (charged as kGathered while it lives), computes
// inputs * W^T and discards the gathered copy. Replicated weights are used
// in place with no gather.
Tensor sharded_dense_forward(const ShardedWeight& sw, const Tensor& inputs,
                             MemoryLedger* ledger = nullptr, std::string_view name = "dense");

// Weight access for an encoder whose dense weights are sharded on the input
// axis. se-like layers and normalization gains are replicated. A gathered
// weight lives from acquire() to release().
class ShardedEncoder final : public encoders::WeightAccess {
 public:
  ShardedEncoder(const encoders::EncoderNet& net, std::size_t cores,
                 MemoryLedger* ledger = nullptr);

  const Tensor& acquire(std::size_t layer) override;
  void release(std::size_t layer) override;

  std::size_t cores() const { return cores_; }
  const ShardedWeight& weight(std::size_t layer) const { return weights_.at(layer); }
  const ShardedWeight& gain(std::size_t layer) const { return gains_.at(layer); }
  void set_ledger(MemoryLedger* ledger) { ledger_ = ledger; }

  // Per-core parameter elements after sharding.
  std::size_t resident_elements() const;

 private:
  std::size_t cores_;
  MemoryLedger* ledger_;
  std::vector<ShardedWeight> weights_;
  std::vector<ShardedWeight> gains_;  // empty ShardedWeight when the layer has no gain
  std::vector<std::optional<TrackedTensor>> gathered_;
};

// Optimizer moments laid out like the weights they belong to: v1 (and a full
// v2) split on the weight's shard axis; factored second moments keep the
// column sums sharded on the input axis and the row sums replicated.
struct ShardedSlots {
  std::vector<ShardedWeight> v1;
  std::vector<ShardedWeight> v2;   // full second moments (non-factored tensors)
  std::vector<ShardedWeight> row;  // factored row sums
  std::vector<ShardedWeight> col;  // factored column sums

  std::size_t resident_elements() const;
};

ShardedSlots shard_slots(const optim::MomentSlots& slots, const encoders::EncoderNet& net,
                         std::size_t cores);

// Rematerialization decisions.
enum class BlockKind : std::uint8_t { kDenseBlock, kNorm, kActivation, kSeLike };
enum class RematDecision : std::uint8_t { kSave, kRecompute, kRecomputeAllReplicated };

RematDecision remat_policy(BlockKind kind);
// Parses "dense-block", "norm", "layernorm", "activation", "se-like";
// throws ConfigError otherwise.
BlockKind parse_block_kind(std::string_view name);
std::string_view to_string(RematDecision d);

// Tape policy that applies remat_policy to every layer of `net`.
encoders::TapePolicy remat_tape_policy(const encoders::EncoderNet& net);

}  // namespace bsc::shardsim

#endif  // BSC_SHARDSIM_SHARD_HPP_
