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

#include "bsc/shardsim/shard.hpp"

#include <string>

#include "bsc/errors.hpp"
#include "bsc/numerics/ops.hpp"

namespace bsc::shardsim {

namespace {

struct AxisSplit {
  std::size_t outer = 1;
  std::size_t len = 0;
  std::size_t inner = 1;
};

AxisSplit split_at(const Shape& shape, std::size_t axis) {
  AxisSplit s;
  for (std::size_t a = 0; a < axis; ++a) s.outer *= shape[a];
  s.len = shape[axis];
  for (std::size_t a = axis + 1; a < shape.size(); ++a) s.inner *= shape[a];
  return s;
}

}  // namespace

ShardedWeight shard(const Tensor& weight, std::size_t cores, std::size_t axis) {
  if (cores == 0) throw ShardPlanError("core count must be positive");
  if (axis >= weight.rank()) {
    throw ShardPlanError("shard axis " + std::to_string(axis) + " out of range for shape " +
                         shape_string(weight.shape()));
  }
  const AxisSplit s = split_at(weight.shape(), axis);
  if (s.len % cores != 0) {
    throw ShardPlanError("axis " + std::to_string(axis) + " of " + shape_string(weight.shape()) +
                         " is not divisible by " + std::to_string(cores) + " cores");
  }
  const std::size_t piece = s.len / cores;
  ShardedWeight sw{weight.shape(), axis, {}, false};
  Shape shard_shape = weight.shape();
  shard_shape[axis] = piece;
  for (std::size_t c = 0; c < cores; ++c) {
    Tensor t(shard_shape);
    std::size_t out = 0;
    for (std::size_t o = 0; o < s.outer; ++o) {
      const double* src = weight.data() + (o * s.len + c * piece) * s.inner;
      for (std::size_t e = 0; e < piece * s.inner; ++e) t[out++] = src[e];
    }
    sw.shards.push_back(std::move(t));
  }
  return sw;
}

ShardedWeight replicate(const Tensor& weight, std::size_t cores) {
  if (cores == 0) throw ShardPlanError("core count must be positive");
  return ShardedWeight{weight.shape(), 0, std::vector<Tensor>(cores, weight), true};
}

Tensor concat(const ShardedWeight& sw) {
  if (sw.shards.empty()) throw ShardPlanError("sharded weight has no shards");
  if (sw.replicated) return sw.shards.front();
  Tensor full(sw.full_shape);
  const AxisSplit s = split_at(sw.full_shape, sw.axis);
  const std::size_t piece = s.len / sw.cores();
  for (std::size_t c = 0; c < sw.cores(); ++c) {
    const Tensor& t = sw.shards[c];
    std::size_t in = 0;
    for (std::size_t o = 0; o < s.outer; ++o) {
      double* dst = full.data() + (o * s.len + c * piece) * s.inner;
      for (std::size_t e = 0; e < piece * s.inner; ++e) dst[e] = t[in++];
    }
  }
  return full;
}

Tensor sharded_dense_forward(const ShardedWeight& sw, const Tensor& inputs, MemoryLedger* ledger,
                             std::string_view name) {
  if (sw.full_shape.size() != 2) throw DimensionError("dense weight must be a matrix");
  if (inputs.rank() != 2 || inputs.dim(1) != sw.full_shape[1]) {
    throw DimensionError("dense input " + shape_string(inputs.shape()) +
                         " does not match weight " + shape_string(sw.full_shape));
  }
  if (sw.replicated || sw.cores() == 1) return matmul_nt(inputs, sw.shards.front());
  TrackedTensor full(concat(sw), ledger, MemCategory::kGathered, "gather");
  if (ledger) ledger->record_gather(sw.full_elements() - sw.shard_elements(), name);
  Tensor z = matmul_nt(inputs, full.value);
  return z;  // `full` is discarded here
}

ShardedEncoder::ShardedEncoder(const encoders::EncoderNet& net, std::size_t cores,
                               MemoryLedger* ledger)
    : cores_(cores), ledger_(ledger), gathered_(net.depth()) {
  for (std::size_t l = 0; l < net.depth(); ++l) {
    const encoders::Layer& layer = net.layer(l);
    weights_.push_back(layer.se_like ? replicate(layer.weight, cores)
                                     : shard(layer.weight, cores, 1));
    gains_.push_back(layer.gain.empty() ? ShardedWeight{} : replicate(layer.gain, cores));
  }
}

const Tensor& ShardedEncoder::acquire(std::size_t layer) {
  const ShardedWeight& sw = weights_.at(layer);
  if (sw.replicated || cores_ == 1) return sw.shards.front();
  if (gathered_[layer]) throw Error("layer " + std::to_string(layer) + " gathered twice");
  gathered_[layer].emplace(concat(sw), ledger_, MemCategory::kGathered, "gather");
  if (ledger_) {
    ledger_->record_gather(sw.full_elements() - sw.shard_elements(),
                           "layer" + std::to_string(layer));
  }
  return gathered_[layer]->value;
}

void ShardedEncoder::release(std::size_t layer) { gathered_.at(layer).reset(); }

std::size_t ShardedEncoder::resident_elements() const {
  std::size_t total = 0;
  for (const ShardedWeight& w : weights_) total += w.shard_elements();
  for (const ShardedWeight& g : gains_) total += g.shard_elements();
  return total;
}

std::size_t ShardedSlots::resident_elements() const {
  std::size_t total = 0;
  for (const auto* group : {&v1, &v2, &row, &col}) {
    for (const ShardedWeight& w : *group) total += w.shard_elements();
  }
  return total;
}

ShardedSlots shard_slots(const optim::MomentSlots& slots, const encoders::EncoderNet& net,
                         std::size_t cores) {
  if (slots.size() != net.num_params()) {
    throw DimensionError("slots do not belong to this encoder");
  }
  ShardedSlots out;
  for (std::size_t p = 0; p < slots.size(); ++p) {
    const optim::TensorSlots& s = slots.slot(p);
    const auto [layer, is_gain] = net.param_location(p);
    const bool replicated = is_gain || net.layer(layer).se_like;
    auto place = [&](const Tensor& t, std::size_t axis) {
      return replicated ? replicate(t, cores) : shard(t, cores, axis);
    };
    out.v1.push_back(place(s.v1, is_gain ? 0 : 1));
    if (s.factored) {
      out.row.push_back(replicate(s.row, cores));
      out.col.push_back(place(s.col, 0));
    } else {
      out.v2.push_back(place(s.v2, is_gain ? 0 : 1));
    }
  }
  return out;
}

RematDecision remat_policy(BlockKind kind) {
  switch (kind) {
    case BlockKind::kDenseBlock: return RematDecision::kSave;
    case BlockKind::kNorm: return RematDecision::kRecompute;
    case BlockKind::kActivation: return RematDecision::kRecompute;
    case BlockKind::kSeLike: return RematDecision::kRecomputeAllReplicated;
  }
  throw ConfigError("unknown block kind");
}

BlockKind parse_block_kind(std::string_view name) {
  if (name == "dense-block" || name == "dense") return BlockKind::kDenseBlock;
  if (name == "norm" || name == "layernorm") return BlockKind::kNorm;
  if (name == "activation") return BlockKind::kActivation;
  if (name == "se-like") return BlockKind::kSeLike;
  throw ConfigError("unknown block kind '" + std::string(name) + "'");
}

std::string_view to_string(RematDecision d) {
  switch (d) {
    case RematDecision::kSave: return "save";
    case RematDecision::kRecompute: return "recompute";
    case RematDecision::kRecomputeAllReplicated: return "recompute-all-replicated";
  }
  return "unknown";
}

encoders::TapePolicy remat_tape_policy(const encoders::EncoderNet& net) {
  encoders::TapePolicy p;
  for (std::size_t l = 0; l < net.depth(); ++l) {
    if (net.layer(l).se_like) {
      p.layers.push_back({false, false, false});
      continue;
    }
    auto keep = [](BlockKind k) { return remat_policy(k) == RematDecision::kSave; };
    p.layers.push_back(
        {keep(BlockKind::kDenseBlock), keep(BlockKind::kNorm), keep(BlockKind::kActivation)});
  }
  return p;
}

}  // namespace bsc::shardsim
