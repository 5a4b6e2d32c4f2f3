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

#ifndef BSC_OPTIM_OPTIM_HPP_
#define BSC_OPTIM_OPTIM_HPP_

#include <cstddef>
#include <vector>

#include "bsc/encoders/encoder.hpp"
#include "bsc/numerics/tensor.hpp"
#include "bsc/shardsim/ledger.hpp"

namespace bsc::optim {

using encoders::ParamGrads;

struct SlotConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  // Matrices keep row and column sums of the second moment instead of the
  // full tensor. Vectors always keep the full tensor.
  bool factorized = true;
  // First moment stored as bfloat16 (emulated), widened for arithmetic.
  bool bf16_v1 = false;
  // Divide the moments by (1 - beta^t) before the update.
  bool bias_correction = true;
};

struct TensorSlots {
  Tensor v1;
  Tensor v2;   // full second moment; empty when factored
  Tensor row;  // [n] row sums of the second moment when factored
  Tensor col;  // [m] column sums when factored
  bool factored = false;
};

// Optimizer moments for a list of parameter tensors, plus the bookkeeping
// that keeps the K-call fused update sequences honest.
class MomentSlots {
 public:
  MomentSlots(const std::vector<Shape>& shapes, SlotConfig config,
              MemoryLedger* ledger = nullptr);
  static MomentSlots for_net(const encoders::EncoderNet& net, SlotConfig config,
                             MemoryLedger* ledger = nullptr);

  const SlotConfig& config() const { return config_; }
  std::size_t size() const { return slots_.size(); }
  const TensorSlots& slot(std::size_t i) const { return slots_.at(i); }
  TensorSlots& mutable_slot(std::size_t i) { return slots_.at(i); }
  // Full v2, or r c^T / sum(r) for factored matrices (0 where sum(r) = 0).
  Tensor second_moment(std::size_t i) const;
  // Elements held by all slots together.
  std::size_t element_count() const;
  // Optimizer steps applied so far.
  std::size_t step() const { return step_; }

 private:
  friend void fused_v1_update(MomentSlots&, const ParamGrads&, std::size_t, std::size_t);
  friend void fused_v2_update(MomentSlots&, const ParamGrads&, const ParamGrads&, std::size_t,
                              std::size_t);
  friend void adafactorw_apply(const std::vector<Tensor*>&, MomentSlots&, double, double);

  struct Sequence {
    std::size_t count = 0;  // K of the sequence in progress, 0 when idle
    std::size_t next = 1;
  };
  static void advance(Sequence& seq, std::size_t i, std::size_t k, const char* what);
  void check_grads(const ParamGrads& g, const char* what) const;

  SlotConfig config_;
  std::vector<TensorSlots> slots_;
  Sequence seq_v1_;
  Sequence seq_v2_;
  std::size_t completed_v1_ = 0;
  std::size_t completed_v2_ = 0;
  std::size_t step_ = 0;
  Reservation hold_;
};

// Call i of K (1-based) folds microbatch gradient c_i into v1:
//   i = 1: v1 <- beta1 v1 + (1 - beta1)/K c_1;  i > 1: v1 <- v1 + (1 - beta1)/K c_i.
// After all K calls v1 = beta1 v1_prev + (1 - beta1) mean(c).
void fused_v1_update(MomentSlots& slots, const ParamGrads& c, std::size_t i, std::size_t k);

// Same scheme with beta2 on u_i = max(0, c_i^2 - (K - 1)/K var_i). Pass an
// empty `var` for no correction.
void fused_v2_update(MomentSlots& slots, const ParamGrads& c, const ParamGrads& var,
                     std::size_t i, std::size_t k);

// Per-replica mean gradients d_1..d_R of one microbatch.
struct ReplicaGrads {
  std::vector<ParamGrads> replicas;

  std::size_t count() const { return replicas.size(); }
  ParamGrads mean() const;
};

// s^2(d_1..d_R) / R elementwise with the unbiased (R - 1) divisor; estimates
// Var(c_i). Throws VarianceUnestimableError when R < 2.
ParamGrads estimate_microbatch_variance(const ReplicaGrads& rg);

// theta <- theta (1 - lr wd) - lr v1_hat / sqrt(v2_hat + eps), where v2_hat
// is the (reconstructed) second moment and the hats denote optional bias
// correction. No relative step sizes, no update clipping. Needs exactly one
// completed v1 and v2 sequence since the previous step. Decay never touches
// the slots.
inline constexpr double kAdaFactorEpsilon = 1e-30;
void adafactorw_apply(const std::vector<Tensor*>& params, MomentSlots& slots, double lr,
                      double weight_decay);
void adafactorw_step(encoders::EncoderNet& net, MomentSlots& slots, double lr,
                     double weight_decay);

}  // namespace bsc::optim

#endif  // BSC_OPTIM_OPTIM_HPP_
