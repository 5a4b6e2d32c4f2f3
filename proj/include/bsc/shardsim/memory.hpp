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

#ifndef BSC_SHARDSIM_MEMORY_HPP_
#define BSC_SHARDSIM_MEMORY_HPP_

#include <cstddef>
#include <cstdint>
#include <string_view>

#include "bsc/encoders/encoder.hpp"
#include "bsc/microbatch/engine.hpp"
#include "bsc/optim/optim.hpp"
#include "bsc/shardsim/ledger.hpp"

namespace bsc::shardsim {

enum class Strategy : std::uint8_t { kDataParallel, kPipelineGradAccum, kSpmdShard };

std::string_view to_string(Strategy s);
// Accepts "data-parallel", "pipeline-gradaccum", "spmd-shard".
Strategy parse_strategy(std::string_view name);

struct ModelUnderTest {
  const encoders::EncoderNet* image = nullptr;
  const encoders::EncoderNet* text = nullptr;
  optim::SlotConfig slots;
  Tensor image_example;  // one input row, [1 x kappa]
  Tensor text_example;   // one input row, [1 x T x d] or [1 x d]
};

// One training step's memory, in elements, for a single device (one core of
// a replica for spmd-shard).
//
//   data-parallel       whole batch through each encoder with full tapes
//   pipeline-gradaccum  the microbatched step with microbatch M
//   spmd-shard          the microbatched step with M / R_cores rows per core,
//                       dense weights sharded over R_cores and gathered on
//                       use, and the save-dense / recompute-rest remat policy
//
// peak_elements = weights + slots + grads + gathered_peak + working_peak.
// Weights, slots and gradient buffers are resident for the whole step; the
// working set holds embeddings, similarity blocks and activations.
struct MemoryReport {
  Strategy strategy = Strategy::kPipelineGradAccum;
  std::size_t batch = 0;
  std::size_t micro = 0;
  std::size_t cores = 1;
  std::int64_t weights = 0;
  std::int64_t slots = 0;
  std::int64_t grads = 0;
  std::int64_t activation_peak = 0;
  std::int64_t working_peak = 0;
  std::int64_t gathered_peak = 0;
  std::int64_t peak_elements = 0;
  std::uint64_t gather_elements = 0;  // received by all cores over the step

  std::int64_t residency() const { return weights + slots + grads; }
};

// Closed form built from single-example pass profiles.
MemoryReport analytic_peak(Strategy strategy, const ModelUnderTest& model, std::size_t batch,
                           std::size_t micro, std::size_t cores);

// Runs one step on random inputs under a ledger and reads the peaks off it.
MemoryReport instrumented_peak(Strategy strategy, const ModelUnderTest& model,
                               std::size_t batch, std::size_t micro, std::size_t cores,
                               std::uint64_t seed = 0);

// The figure reported by mem-report.
inline MemoryReport peak_memory(Strategy strategy, const ModelUnderTest& model, std::size_t batch,
                                std::size_t micro, std::size_t cores) {
  return analytic_peak(strategy, model, batch, micro, cores);
}

struct DataParallelResult {
  double loss = 0.0;
  encoders::ParamGrads grad_img;
  encoders::ParamGrads grad_txt;
};

// Whole-batch step with both tapes held until the backward passes, charging
// the ledger the way a data-parallel replica would.
DataParallelResult data_parallel_step(const encoders::EncoderNet& f,
                                      const encoders::EncoderNet& g,
                                      const microbatch::PairBatch& batch, double temperature,
                                      MemoryLedger* ledger);

}  // namespace bsc::shardsim

#endif  // BSC_SHARDSIM_MEMORY_HPP_
