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

#include "bsc/shardsim/memory.hpp"

#include <algorithm>
#include <string>

#include "bsc/contrastive/contrastive.hpp"
#include "bsc/errors.hpp"
#include "bsc/numerics/rng.hpp"
#include "bsc/shardsim/shard.hpp"

namespace bsc::shardsim {

namespace {

using encoders::EncoderNet;
using I = std::int64_t;

void check_model(const ModelUnderTest& m) {
  if (!m.image || !m.text) throw ConfigError("memory model needs both encoders");
  if (m.image->embed_dim() != m.text->embed_dim()) {
    throw DimensionError("encoders embed to different dimensions");
  }
}

void check_plan(Strategy s, std::size_t batch, std::size_t micro, std::size_t cores) {
  if (batch == 0 || cores == 0) throw ConfigError("batch size and core count must be positive");
  if (s == Strategy::kDataParallel) return;
  if (micro == 0 || batch % micro != 0) {
    throw ConfigError("microbatch " + std::to_string(micro) + " must divide batch " +
                      std::to_string(batch));
  }
  if (s == Strategy::kSpmdShard && micro % cores != 0) {
    throw ConfigError("core count " + std::to_string(cores) + " must divide microbatch " +
                      std::to_string(micro));
  }
}

encoders::TapePolicy policy_for(Strategy s, const EncoderNet& net) {
  return s == Strategy::kSpmdShard ? remat_tape_policy(net) : encoders::TapePolicy::save_all(net);
}

struct Residency {
  I weights = 0;
  I slots = 0;
};

Residency residency(Strategy s, const ModelUnderTest& m, std::size_t cores) {
  Residency r;
  const optim::MomentSlots sf = optim::MomentSlots::for_net(*m.image, m.slots);
  const optim::MomentSlots sg = optim::MomentSlots::for_net(*m.text, m.slots);
  if (s == Strategy::kSpmdShard) {
    r.weights = static_cast<I>(ShardedEncoder(*m.image, cores).resident_elements() +
                               ShardedEncoder(*m.text, cores).resident_elements());
    r.slots = static_cast<I>(shard_slots(sf, *m.image, cores).resident_elements() +
                             shard_slots(sg, *m.text, cores).resident_elements());
  } else {
    r.weights = static_cast<I>(m.image->num_scalars() + m.text->num_scalars());
    r.slots = static_cast<I>(sf.element_count() + sg.element_count());
  }
  return r;
}

I largest_gathered(const EncoderNet& net) {
  I best = 0;
  for (const encoders::Layer& l : net.layers()) {
    if (!l.se_like) best = std::max(best, static_cast<I>(l.weight.numel()));
  }
  return best;
}

std::uint64_t gathered_per_step(const EncoderNet& net, std::size_t passes, std::size_t cores) {
  std::uint64_t total = 0;
  for (std::size_t l = 0; l < net.depth(); ++l) {
    const encoders::Layer& layer = net.layer(l);
    if (layer.se_like) continue;
    const std::uint64_t received = layer.weight.numel() - layer.weight.numel() / cores;
    // Two forward passes per microbatch slice; backward needs W_l for l > 0.
    total += received * passes * (l > 0 ? 3 : 2);
  }
  return total;
}

void finish(MemoryReport& r) {
  r.grads = r.weights;
  r.peak_elements = r.residency() + r.gathered_peak + r.working_peak;
}

}  // namespace

std::string_view to_string(Strategy s) {
  switch (s) {
    case Strategy::kDataParallel: return "data-parallel";
    case Strategy::kPipelineGradAccum: return "pipeline-gradaccum";
    case Strategy::kSpmdShard: return "spmd-shard";
  }
  return "unknown";
}

Strategy parse_strategy(std::string_view name) {
  if (name == "data-parallel") return Strategy::kDataParallel;
  if (name == "pipeline-gradaccum") return Strategy::kPipelineGradAccum;
  if (name == "spmd-shard") return Strategy::kSpmdShard;
  throw ConfigError("unknown strategy '" + std::string(name) + "'");
}

MemoryReport analytic_peak(Strategy strategy, const ModelUnderTest& model, std::size_t batch,
                           std::size_t micro, std::size_t cores) {
  check_model(model);
  check_plan(strategy, batch, micro, cores);
  const EncoderNet& f = *model.image;
  const EncoderNet& g = *model.text;
  const encoders::PassProfile pf = encoders::profile_pass(f, policy_for(strategy, f),
                                                          model.image_example);
  const encoders::PassProfile pg = encoders::profile_pass(g, policy_for(strategy, g),
                                                          model.text_example);
  MemoryReport r;
  r.strategy = strategy;
  r.batch = batch;
  r.micro = strategy == Strategy::kDataParallel ? batch : micro;
  r.cores = strategy == Strategy::kSpmdShard ? cores : 1;
  const Residency res = residency(strategy, model, r.cores);
  r.weights = res.weights;
  r.slots = res.slots;

  const I b = static_cast<I>(batch);
  const I d = static_cast<I>(f.embed_dim());
  const I emb = 2 * b * d;
  const I head = 4 * b * d + 2 * b * b;

  if (strategy == Strategy::kDataParallel) {
    const I a1 = b * pf.forward_taped;
    const I a2 = b * pf.tape_retained + b * pg.forward_taped;
    const I a3 = b * pf.tape_retained + b * pg.tape_retained;
    const I a4 = b * pf.backward + b * pg.tape_retained;
    const I a5 = b * pg.backward;
    r.activation_peak = std::max({a1, a2, a3, a4, a5});
    r.working_peak = std::max({emb + a1, emb + a2, head + a3, head + a4, head + a5});
  } else {
    const I rows = static_cast<I>(micro / r.cores);
    const I embed = rows * std::max(pf.forward_untaped, pg.forward_untaped);
    const I step = rows * std::max(pf.forward_backward, pg.forward_backward);
    r.activation_peak = std::max(embed, step);
    r.working_peak = std::max(emb + embed, head + step);
  }
  if (strategy == Strategy::kSpmdShard && r.cores > 1) {
    r.gathered_peak = std::max(largest_gathered(f), largest_gathered(g));
    const std::size_t passes = batch / micro * r.cores;
    r.gather_elements = gathered_per_step(f, passes, r.cores) + gathered_per_step(g, passes, r.cores);
  }
  finish(r);
  return r;
}

DataParallelResult data_parallel_step(const EncoderNet& f, const EncoderNet& g,
                                      const microbatch::PairBatch& batch, double temperature,
                                      MemoryLedger* ledger) {
  const std::size_t b = batch.size();
  const std::size_t d = f.embed_dim();
  Reservation hold_xy(ledger, MemCategory::kEmbeddings, 2 * b * d, "X,Y");
  encoders::PassOptions po;
  po.ledger = ledger;
  encoders::ActivationTape tf(encoders::TapePolicy::save_all(f));
  encoders::ActivationTape tg(encoders::TapePolicy::save_all(g));
  const Tensor x = encoders::forward(f, batch.images, &tf, po);
  const Tensor y = encoders::forward(g, batch.texts, &tg, po);
  const contrastive::SimilarityMatrix s = contrastive::similarity(x, y, temperature);
  Reservation hold_a(ledger, MemCategory::kSimilarity, b * b, "A");
  const Tensor da = contrastive::loss_grad_wrt_A(s);
  Reservation hold_da(ledger, MemCategory::kSimilarity, b * b, "dA");
  const contrastive::EmbeddingGrads eg = contrastive::grad_to_embeddings(s, x, y, da);
  Reservation hold_dxy(ledger, MemCategory::kEmbeddings, 2 * b * d, "dX,dY");
  DataParallelResult r;
  r.loss = contrastive::contrastive_loss(s);
  r.grad_img = encoders::backward(f, tf, eg.dx, po);
  r.grad_txt = encoders::backward(g, tg, eg.dy, po);
  return r;
}

MemoryReport instrumented_peak(Strategy strategy, const ModelUnderTest& model,
                               std::size_t batch, std::size_t micro, std::size_t cores,
                               std::uint64_t seed) {
  check_model(model);
  check_plan(strategy, batch, micro, cores);
  const EncoderNet& f = *model.image;
  const EncoderNet& g = *model.text;
  Rng rng(seed, 0x6d656d);
  Shape img_shape = model.image_example.shape();
  Shape txt_shape = model.text_example.shape();
  img_shape[0] = batch;
  txt_shape[0] = batch;
  const microbatch::PairBatch pairs{rng.normal_tensor(img_shape), rng.normal_tensor(txt_shape)};
  constexpr double kTemperature = 0.1;

  MemoryReport r;
  r.strategy = strategy;
  r.batch = batch;
  r.micro = strategy == Strategy::kDataParallel ? batch : micro;
  r.cores = strategy == Strategy::kSpmdShard ? cores : 1;

  MemoryLedger ledger;
  // Residency is charged up front so the ledger's timeline carries it too.
  const Residency res = residency(strategy, model, r.cores);
  Reservation hold_w(&ledger, MemCategory::kWeights, static_cast<std::size_t>(res.weights), "w");
  Reservation hold_s(&ledger, MemCategory::kSlots, static_cast<std::size_t>(res.slots), "slots");
  Reservation hold_g(&ledger, MemCategory::kGradients, static_cast<std::size_t>(res.weights),
                     "grad buffer");
  const std::int64_t resident_working = ledger.working_peak();

  if (strategy == Strategy::kDataParallel) {
    data_parallel_step(f, g, pairs, kTemperature, &ledger);
  } else {
    microbatch::EngineOptions opts;
    opts.ledger = &ledger;
    std::optional<ShardedEncoder> sf;
    std::optional<ShardedEncoder> sg;
    if (strategy == Strategy::kSpmdShard) {
      sf.emplace(f, r.cores, &ledger);
      sg.emplace(g, r.cores, &ledger);
      opts.weights_img = &*sf;
      opts.weights_txt = &*sg;
      opts.policy_img = remat_tape_policy(f);
      opts.policy_txt = remat_tape_policy(g);
    }
    const auto plan = microbatch::BatchPlan::make(batch, micro, micro, r.cores);
    microbatch::microbatch_gradients(f, g, pairs, plan, kTemperature,
                                     [](const microbatch::MicrobatchGrad&) {}, opts);
  }
  r.weights = ledger.peak(MemCategory::kWeights);
  r.slots = ledger.peak(MemCategory::kSlots);
  r.activation_peak = ledger.peak(MemCategory::kActivations);
  // The gradient buffer sits in a working category; report it as residency.
  r.working_peak = ledger.working_peak() - resident_working;
  r.gathered_peak = ledger.peak(MemCategory::kGathered);
  r.gather_elements = ledger.gathered_elements();
  finish(r);
  return r;
}

}  // namespace bsc::shardsim
