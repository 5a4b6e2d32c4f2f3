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

#include "bsc/microbatch/engine.hpp"

#include <string>

#include "bsc/contrastive/contrastive.hpp"
#include "bsc/errors.hpp"
#include "bsc/numerics/ops.hpp"

namespace bsc::microbatch {

namespace {

void scale_grads(ParamGrads& g, double s) {
  for (Tensor& t : g) {
    for (auto& v : t.span()) v *= s;
  }
}

void add_grads(ParamGrads& acc, const ParamGrads& g) {
  if (acc.empty()) {
    acc = g;
    return;
  }
  for (std::size_t i = 0; i < acc.size(); ++i) axpy_inplace(acc[i], 1.0, g[i]);
}

void check_batch(const EncoderNet& f, const EncoderNet& g, const PairBatch& batch,
                 const BatchPlan& plan) {
  plan.validate();
  if (batch.size() != plan.batch || batch.texts.rank() == 0 ||
      batch.texts.dim(0) != plan.batch) {
    throw ConfigError("batch holds " + std::to_string(batch.size()) + " pairs but the plan is for " +
                      std::to_string(plan.batch));
  }
  if (f.embed_dim() != g.embed_dim()) {
    throw DimensionError("image and text encoders embed to different dimensions");
  }
}

// Rows each device pushes through an encoder at once.
std::size_t device_rows(std::size_t micro, const BatchPlan& plan) {
  return micro / plan.replicas;
}

}  // namespace

BatchPlan BatchPlan::make(std::size_t batch, std::size_t micro_img, std::size_t micro_txt,
                          std::size_t replicas) {
  BatchPlan p{batch, micro_img, micro_txt, replicas};
  p.validate();
  return p;
}

void BatchPlan::validate() const {
  if (batch == 0 || micro_img == 0 || micro_txt == 0 || replicas == 0) {
    throw ConfigError("batch plan sizes must be positive");
  }
  if (batch % micro_img != 0 || batch % micro_txt != 0) {
    throw ConfigError("microbatch sizes " + std::to_string(micro_img) + "/" +
                      std::to_string(micro_txt) + " must divide the batch size " +
                      std::to_string(batch));
  }
  if (micro_img % replicas != 0 || micro_txt % replicas != 0) {
    throw ConfigError("replica count " + std::to_string(replicas) +
                      " must divide both microbatch sizes");
  }
}

PairBatch PairBatch::slice(std::size_t begin, std::size_t end) const {
  return PairBatch{images.slice_rows(begin, end), texts.slice_rows(begin, end)};
}

double EngineStats::passes_img(std::size_t batch) const {
  return static_cast<double>(rows_forwarded_img) / static_cast<double>(batch);
}

double EngineStats::passes_txt(std::size_t batch) const {
  return static_cast<double>(rows_forwarded_txt) / static_cast<double>(batch);
}

EmbeddingBuffers embed_phase(const EncoderNet& f, const EncoderNet& g, const PairBatch& batch,
                             const BatchPlan& plan, const EngineOptions& options,
                             EngineStats* stats) {
  check_batch(f, g, batch, plan);
  const std::size_t b = plan.batch;
  const std::size_t d = f.embed_dim();
  EmbeddingBuffers buf;
  buf.x = Tensor({b, d});
  buf.y = Tensor({b, d});
  buf.x_filled.assign(b, false);
  buf.y_filled.assign(b, false);
  buf.hold = Reservation(options.ledger, MemCategory::kEmbeddings, 2 * b * d, "embed:alloc");

  auto run = [&](const EncoderNet& net, const Tensor& inputs, std::size_t chunk, Tensor& out,
                 std::vector<bool>& filled, encoders::WeightAccess* weights, Tower tower) {
    encoders::PassStats ps;
    encoders::PassOptions po;
    po.ledger = options.ledger;
    po.weights = weights;
    po.stats = &ps;
    for (std::size_t begin = 0; begin < b; begin += chunk) {
      const Tensor u = encoders::forward(net, inputs.slice_rows(begin, begin + chunk), nullptr, po);
      out.assign_rows(begin, u);
      for (std::size_t r = begin; r < begin + chunk; ++r) {
        if (filled[r]) throw Error("embedding row written twice");
        filled[r] = true;
      }
      if (stats) (tower == Tower::kImage ? stats->forward_calls_img : stats->forward_calls_txt)++;
    }
    if (stats) {
      (tower == Tower::kImage ? stats->rows_forwarded_img : stats->rows_forwarded_txt) +=
          ps.rows_forwarded;
    }
  };
  run(f, batch.images, device_rows(plan.micro_img, plan), buf.x, buf.x_filled,
      options.weights_img, Tower::kImage);
  run(g, batch.texts, device_rows(plan.micro_txt, plan), buf.y, buf.y_filled,
      options.weights_txt, Tower::kText);
  return buf;
}

StepResult microbatch_gradients(const EncoderNet& f, const EncoderNet& g, const PairBatch& batch,
                                const BatchPlan& plan, double temperature, const GradSink& sink,
                                const EngineOptions& options) {
  StepResult result;
  EmbeddingBuffers buf = embed_phase(f, g, batch, plan, options, &result.stats);
  const std::size_t b = plan.batch;
  const std::size_t d = f.embed_dim();
  MemoryLedger* ledger = options.ledger;

  const contrastive::SimilarityMatrix s = contrastive::similarity(buf.x, buf.y, temperature);
  Reservation hold_a(ledger, MemCategory::kSimilarity, b * b, "similarity");
  result.loss = contrastive::contrastive_loss(s);
  const Tensor da = contrastive::loss_grad_wrt_A(s);
  Reservation hold_da(ledger, MemCategory::kSimilarity, b * b, "dA");
  const contrastive::EmbeddingGrads eg = contrastive::grad_to_embeddings(s, buf.x, buf.y, da);
  Reservation hold_dxy(ledger, MemCategory::kEmbeddings, 2 * b * d, "dX,dY");

  auto run = [&](const EncoderNet& net, const Tensor& inputs, const Tensor& dout,
                 std::size_t micro, const std::optional<encoders::TapePolicy>& policy,
                 encoders::WeightAccess* weights, Tower tower) {
    const std::size_t k = b / micro;
    const std::size_t rows = device_rows(micro, plan);
    const encoders::TapePolicy tape_policy =
        policy ? *policy : encoders::TapePolicy::save_all(net);
    encoders::PassStats ps;
    encoders::PassOptions po;
    po.ledger = ledger;
    po.weights = weights;
    po.stats = &ps;
    for (std::size_t i = 0; i < k; ++i) {
      MicrobatchGrad m;
      m.tower = tower;
      m.index = i + 1;
      m.count = k;
      for (std::size_t r = 0; r < plan.replicas; ++r) {
        const std::size_t begin = i * micro + r * rows;
        encoders::ActivationTape tape(tape_policy);
        encoders::forward(net, inputs.slice_rows(begin, begin + rows), &tape, po);
        if (tower == Tower::kImage) {
          ++result.stats.forward_calls_img;
        } else {
          ++result.stats.forward_calls_txt;
        }
        ParamGrads part = encoders::backward(net, tape, dout.slice_rows(begin, begin + rows), po);
        if (plan.replicas == 1) {
          m.grads = std::move(part);
        } else {
          add_grads(m.grads, part);
          scale_grads(part, static_cast<double>(k * plan.replicas));
          m.replica_grads.push_back(std::move(part));
        }
      }
      scale_grads(m.grads, static_cast<double>(k));
      sink(m);
    }
    (tower == Tower::kImage ? result.stats.rows_forwarded_img : result.stats.rows_forwarded_txt) +=
        ps.rows_forwarded;
    result.stats.items_recomputed += ps.items_recomputed;
  };
  if (options.train_img) {
    run(f, batch.images, eg.dx, plan.micro_img, options.policy_img, options.weights_img,
        Tower::kImage);
  }
  if (options.train_txt) {
    run(g, batch.texts, eg.dy, plan.micro_txt, options.policy_txt, options.weights_txt,
        Tower::kText);
  }
  return result;
}

OracleResult monolithic_oracle(const EncoderNet& f, const EncoderNet& g, const PairBatch& batch,
                               double temperature) {
  if (batch.size() == 0 || batch.texts.rank() == 0 || batch.texts.dim(0) != batch.size()) {
    throw DimensionError("oracle needs a non-empty batch of aligned pairs");
  }
  encoders::ActivationTape tf(encoders::TapePolicy::save_all(f));
  encoders::ActivationTape tg(encoders::TapePolicy::save_all(g));
  const Tensor x = encoders::forward(f, batch.images, &tf);
  const Tensor y = encoders::forward(g, batch.texts, &tg);
  const contrastive::SimilarityMatrix s = contrastive::similarity(x, y, temperature);
  const Tensor da = contrastive::loss_grad_wrt_A(s);
  const contrastive::EmbeddingGrads eg = contrastive::grad_to_embeddings(s, x, y, da);
  OracleResult r;
  r.loss = contrastive::contrastive_loss(s);
  r.grad_img = encoders::backward(f, tf, eg.dx);
  r.grad_txt = encoders::backward(g, tg, eg.dy);
  return r;
}

void GradAverager::operator()(const MicrobatchGrad& m) {
  ParamGrads& acc = m.tower == Tower::kImage ? img : txt;
  std::size_t& seen = m.tower == Tower::kImage ? seen_img : seen_txt;
  if (m.index != seen + 1) throw SequenceError("microbatch yields arrived out of order");
  add_grads(acc, m.grads);
  seen = m.index;
  if (seen == m.count) scale_grads(acc, 1.0 / static_cast<double>(m.count));
}

}  // namespace bsc::microbatch
