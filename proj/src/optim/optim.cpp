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

#include "bsc/optim/optim.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "bsc/errors.hpp"
#include "bsc/numerics/ops.hpp"

namespace bsc::optim {

namespace {

std::size_t slot_elements(const TensorSlots& s) {
  return s.v1.numel() + s.v2.numel() + s.row.numel() + s.col.numel();
}

void store_v1(TensorSlots& s, bool bf16) {
  if (bf16) {
    for (auto& v : s.v1.span()) v = round_to_bf16(v);
  }
}

}  // namespace

MomentSlots::MomentSlots(const std::vector<Shape>& shapes, SlotConfig config,
                         MemoryLedger* ledger)
    : config_(config) {
  if (!(config.beta1 >= 0.0 && config.beta1 < 1.0 && config.beta2 >= 0.0 &&
        config.beta2 < 1.0)) {
    throw ConfigError("moment decay rates must lie in [0, 1)");
  }
  std::size_t total = 0;
  for (const Shape& shape : shapes) {
    TensorSlots s;
    s.v1 = Tensor(shape);
    if (config.factorized && shape.size() == 2) {
      s.factored = true;
      s.row = Tensor({shape[0]});
      s.col = Tensor({shape[1]});
    } else {
      s.v2 = Tensor(shape);
    }
    total += slot_elements(s);
    slots_.push_back(std::move(s));
  }
  hold_ = Reservation(ledger, MemCategory::kSlots, total, "slots");
}

MomentSlots MomentSlots::for_net(const encoders::EncoderNet& net, SlotConfig config,
                                 MemoryLedger* ledger) {
  std::vector<Shape> shapes;
  for (std::size_t i = 0; i < net.num_params(); ++i) shapes.push_back(net.param(i).shape());
  return MomentSlots(shapes, config, ledger);
}

Tensor MomentSlots::second_moment(std::size_t i) const {
  const TensorSlots& s = slots_.at(i);
  if (!s.factored) return s.v2;
  double total = 0.0;
  for (double r : s.row.span()) total += r;
  Tensor v({s.row.numel(), s.col.numel()});
  if (total == 0.0) return v;
  for (std::size_t a = 0; a < s.row.numel(); ++a) {
    for (std::size_t b = 0; b < s.col.numel(); ++b) v.at(a, b) = s.row[a] * s.col[b] / total;
  }
  return v;
}

std::size_t MomentSlots::element_count() const {
  std::size_t total = 0;
  for (const TensorSlots& s : slots_) total += slot_elements(s);
  return total;
}

void MomentSlots::advance(Sequence& seq, std::size_t i, std::size_t k, const char* what) {
  if (k == 0 || i == 0 || i > k) {
    throw SequenceError(std::string(what) + ": microbatch index " + std::to_string(i) +
                        " outside 1.." + std::to_string(k));
  }
  if (seq.count != 0 && seq.count != k) {
    throw SequenceError(std::string(what) + ": K changed from " + std::to_string(seq.count) +
                        " to " + std::to_string(k) + " mid-sequence");
  }
  if (i != seq.next) {
    throw SequenceError(std::string(what) + ": expected microbatch " + std::to_string(seq.next) +
                        ", got " + std::to_string(i));
  }
  if (i == k) {
    seq = Sequence{};
  } else {
    seq.count = k;
    seq.next = i + 1;
  }
}

void MomentSlots::check_grads(const ParamGrads& g, const char* what) const {
  if (g.size() != slots_.size()) {
    throw DimensionError(std::string(what) + ": " + std::to_string(g.size()) +
                         " gradient tensors for " + std::to_string(slots_.size()) + " slots");
  }
  for (std::size_t p = 0; p < g.size(); ++p) {
    if (g[p].shape() != slots_[p].v1.shape()) {
      throw DimensionError(std::string(what) + ": gradient " + std::to_string(p) + " has shape " +
                           shape_string(g[p].shape()) + ", slot has " +
                           shape_string(slots_[p].v1.shape()));
    }
  }
}

void fused_v1_update(MomentSlots& slots, const ParamGrads& c, std::size_t i, std::size_t k) {
  slots.check_grads(c, "fused_v1_update");
  MomentSlots::advance(slots.seq_v1_, i, k, "fused_v1_update");
  const double beta = slots.config_.beta1;
  const double w = (1.0 - beta) / static_cast<double>(k);
  for (std::size_t p = 0; p < c.size(); ++p) {
    TensorSlots& s = slots.slots_[p];
    for (std::size_t e = 0; e < s.v1.numel(); ++e) {
      const double base = i == 1 ? beta * s.v1[e] : s.v1[e];
      s.v1[e] = base + w * c[p][e];
    }
    store_v1(s, slots.config_.bf16_v1);
  }
  if (i == k) ++slots.completed_v1_;
}

void fused_v2_update(MomentSlots& slots, const ParamGrads& c, const ParamGrads& var,
                     std::size_t i, std::size_t k) {
  slots.check_grads(c, "fused_v2_update");
  if (!var.empty()) slots.check_grads(var, "fused_v2_update variance");
  MomentSlots::advance(slots.seq_v2_, i, k, "fused_v2_update");
  const double beta = slots.config_.beta2;
  const double w = (1.0 - beta) / static_cast<double>(k);
  const double shrink = static_cast<double>(k - 1) / static_cast<double>(k);
  auto u_of = [&](std::size_t p, std::size_t e) {
    const double g = c[p][e];
    const double corr = var.empty() ? 0.0 : shrink * var[p][e];
    return std::max(0.0, g * g - corr);
  };
  for (std::size_t p = 0; p < c.size(); ++p) {
    TensorSlots& s = slots.slots_[p];
    if (!s.factored) {
      for (std::size_t e = 0; e < s.v2.numel(); ++e) {
        const double base = i == 1 ? beta * s.v2[e] : s.v2[e];
        s.v2[e] = base + w * u_of(p, e);
      }
      continue;
    }
    // Row and column sums of u are accumulated directly; u itself is never
    // materialized.
    const std::size_t n = s.row.numel();
    const std::size_t m = s.col.numel();
    if (i == 1) {
      for (auto& v : s.row.span()) v *= beta;
      for (auto& v : s.col.span()) v *= beta;
    }
    for (std::size_t a = 0; a < n; ++a) {
      double rs = 0.0;
      for (std::size_t b = 0; b < m; ++b) rs += u_of(p, a * m + b);
      s.row[a] += w * rs;
    }
    for (std::size_t b = 0; b < m; ++b) {
      double cs = 0.0;
      for (std::size_t a = 0; a < n; ++a) cs += u_of(p, a * m + b);
      s.col[b] += w * cs;
    }
  }
  if (i == k) ++slots.completed_v2_;
}

ParamGrads ReplicaGrads::mean() const {
  if (replicas.empty()) throw VarianceUnestimableError("no replica gradients");
  ParamGrads out = replicas.front();
  for (std::size_t r = 1; r < replicas.size(); ++r) {
    for (std::size_t p = 0; p < out.size(); ++p) axpy_inplace(out[p], 1.0, replicas[r][p]);
  }
  const double inv = 1.0 / static_cast<double>(replicas.size());
  for (Tensor& t : out) {
    for (auto& v : t.span()) v *= inv;
  }
  return out;
}

ParamGrads estimate_microbatch_variance(const ReplicaGrads& rg) {
  const std::size_t r = rg.count();
  if (r < 2) {
    throw VarianceUnestimableError("variance needs at least two replicas, got " +
                                   std::to_string(r) + "; correction disabled");
  }
  const ParamGrads mean = rg.mean();
  ParamGrads var;
  const double scale = 1.0 / (static_cast<double>(r - 1) * static_cast<double>(r));
  for (std::size_t p = 0; p < mean.size(); ++p) {
    Tensor v(mean[p].shape());
    for (std::size_t e = 0; e < v.numel(); ++e) {
      double ss = 0.0;
      for (std::size_t q = 0; q < r; ++q) {
        const double dev = rg.replicas[q][p][e] - mean[p][e];
        ss += dev * dev;
      }
      v[e] = ss * scale;
    }
    var.push_back(std::move(v));
  }
  return var;
}

void adafactorw_apply(const std::vector<Tensor*>& params, MomentSlots& slots, double lr,
                      double weight_decay) {
  if (!(lr > 0.0)) throw ConfigError("learning rate must be positive");
  if (weight_decay < 0.0) throw ConfigError("weight decay must be non-negative");
  if (params.size() != slots.size()) {
    throw DimensionError("optimizer step over " + std::to_string(params.size()) +
                         " tensors with " + std::to_string(slots.size()) + " slots");
  }
  const std::size_t t = slots.step_ + 1;
  if (slots.seq_v1_.count != 0 || slots.seq_v2_.count != 0 || slots.completed_v1_ != t ||
      slots.completed_v2_ != t) {
    throw SequenceError("optimizer step needs one completed v1 and v2 sequence per step");
  }
  const SlotConfig& cfg = slots.config_;
  const double c1 = cfg.bias_correction ? 1.0 - std::pow(cfg.beta1, static_cast<double>(t)) : 1.0;
  const double c2 = cfg.bias_correction ? 1.0 - std::pow(cfg.beta2, static_cast<double>(t)) : 1.0;
  const double decay = 1.0 - lr * weight_decay;
  for (std::size_t p = 0; p < params.size(); ++p) {
    Tensor& theta = *params[p];
    const TensorSlots& s = slots.slots_[p];
    if (theta.shape() != s.v1.shape()) {
      throw DimensionError("parameter " + std::to_string(p) + " does not match its slots");
    }
    double total = 0.0;
    if (s.factored) {
      for (double r : s.row.span()) total += r;
    }
    const std::size_t m = s.factored ? s.col.numel() : 0;
    for (std::size_t e = 0; e < theta.numel(); ++e) {
      double v2 = 0.0;
      if (!s.factored) {
        v2 = s.v2[e];
      } else if (total != 0.0) {
        v2 = s.row[e / m] * s.col[e % m] / total;
      }
      const double step = (s.v1[e] / c1) / std::sqrt(v2 / c2 + kAdaFactorEpsilon);
      theta[e] = theta[e] * decay - lr * step;
    }
    require_finite(theta, "adafactorw_step");
  }
  slots.step_ = t;
}

void adafactorw_step(encoders::EncoderNet& net, MomentSlots& slots, double lr,
                     double weight_decay) {
  std::vector<Tensor*> params;
  for (std::size_t i = 0; i < net.num_params(); ++i) params.push_back(&net.mutable_param(i));
  adafactorw_apply(params, slots, lr, weight_decay);
}

}  // namespace bsc::optim
