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

#include "bsc/harness/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <ostream>
#include <sstream>

#include "bsc/errors.hpp"
#include "bsc/microbatch/engine.hpp"
#include "bsc/numerics/ops.hpp"
#include "bsc/optim/optim.hpp"

namespace bsc::harness {

namespace {

using encoders::EncoderNet;

constexpr double kDivergenceFactor = 10.0;

void put_net(NamedTensors& out, const std::string& prefix, const EncoderNet& net) {
  for (std::size_t i = 0; i < net.num_params(); ++i) {
    out.emplace_back(prefix + "." + net.param_name(i), net.param(i));
  }
}

void get_net(const NamedTensors& in, const std::string& prefix, EncoderNet& net) {
  for (std::size_t i = 0; i < net.num_params(); ++i) {
    const std::string name = prefix + "." + net.param_name(i);
    const Tensor& t = find_tensor(in, name);
    if (t.shape() != net.param(i).shape()) {
      throw FormatError("tensor '" + name + "' has shape " + shape_string(t.shape()) +
                        ", the configured model expects " + shape_string(net.param(i).shape()));
    }
    net.mutable_param(i) = t;
  }
}

// B distinct rows by a partial Fisher-Yates shuffle.
std::vector<std::size_t> sample_rows(Rng& rng, std::size_t n, std::size_t b) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  for (std::size_t i = 0; i < b; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.below(n - i));
    std::swap(idx[i], idx[j]);
  }
  idx.resize(b);
  return idx;
}

void check_divergence(double loss, double initial, std::size_t step, const char* phase) {
  if (!std::isfinite(loss) || loss > kDivergenceFactor * initial) {
    std::ostringstream msg;
    msg << phase << " diverged at step " << step << ": loss " << loss << " vs initial " << initial
        << " (limit " << kDivergenceFactor << "x); lower lr_peak or lengthen warmup";
    throw DivergenceError(msg.str());
  }
}

void check_data(const TrainConfig& cfg, const SyntheticPairSet& data) {
  if (data.images.rank() != 2 || data.images.dim(1) != cfg.data.input_dim ||
      data.texts.rank() != 3 || data.texts.dim(1) != cfg.data.tokens ||
      data.texts.dim(2) != cfg.data.token_dim) {
    throw DataError("dataset dimensions do not match the config's data section");
  }
  if (data.size() < cfg.train.batch_size) throw DataError("dataset smaller than one batch");
  for (std::size_t l : data.labels) {
    if (l >= cfg.model.num_classes) throw LabelError("dataset label outside the model's classes");
  }
}

}  // namespace

NamedTensors model_to_tensors(const ModelState& m) {
  NamedTensors out;
  put_net(out, "image", m.image);
  put_net(out, "text", m.text);
  out.emplace_back("meta.schedule",
                   Tensor::vector({static_cast<double>(static_cast<int>(m.produced_by))}));
  return out;
}

ModelState model_from_tensors(const NamedTensors& t, const TrainConfig& c) {
  Rng scratch(0);
  ModelState m{make_image_encoder(c, scratch), make_text_encoder(c, scratch),
               Schedule::kContrastiveScratch};
  get_net(t, "image", m.image);
  get_net(t, "text", m.text);
  const Tensor& meta = find_tensor(t, "meta.schedule");
  if (meta.numel() != 1 || meta[0] < 0.0 || meta[0] > 2.0) {
    throw FormatError("bad meta.schedule entry");
  }
  m.produced_by = static_cast<Schedule>(static_cast<int>(meta[0]));
  return m;
}

void save_model(const std::string& path, const ModelState& m) {
  save_tensors(path, model_to_tensors(m));
}

ModelState load_model(const std::string& path, const TrainConfig& c) {
  return model_from_tensors(load_tensors(path), c);
}

NamedTensors dataset_to_tensors(const SyntheticPairSet& d) {
  std::vector<double> labels(d.labels.begin(), d.labels.end());
  const auto seed_lo = static_cast<double>(d.spec.seed & 0xffffffffULL);
  const auto seed_hi = static_cast<double>(d.spec.seed >> 32);
  return NamedTensors{
      {"images", d.images},
      {"texts", d.texts},
      {"labels", Tensor::vector(std::move(labels))},
      {"prototypes.images", d.prototypes.images},
      {"prototypes.tokens", d.prototypes.tokens},
      {"meta", Tensor::vector({static_cast<double>(d.spec.classes), d.spec.noise, seed_lo, seed_hi})}};
}

SyntheticPairSet dataset_from_tensors(const NamedTensors& t) {
  SyntheticPairSet d;
  d.images = find_tensor(t, "images");
  d.texts = find_tensor(t, "texts");
  d.prototypes.images = find_tensor(t, "prototypes.images");
  d.prototypes.tokens = find_tensor(t, "prototypes.tokens");
  const Tensor& meta = find_tensor(t, "meta");
  const Tensor& labels = find_tensor(t, "labels");
  if (d.images.rank() != 2 || d.texts.rank() != 3 || meta.numel() != 4 ||
      labels.numel() != d.images.dim(0) || d.texts.dim(0) != d.images.dim(0)) {
    throw FormatError("dataset file is inconsistent");
  }
  d.spec.classes = static_cast<std::size_t>(meta[0]);
  d.spec.noise = meta[1];
  d.spec.seed = static_cast<std::uint64_t>(meta[2]) | (static_cast<std::uint64_t>(meta[3]) << 32);
  d.spec.size = d.images.dim(0);
  d.spec.input_dim = d.images.dim(1);
  d.spec.tokens = d.texts.dim(1);
  d.spec.token_dim = d.texts.dim(2);
  d.spec.validate();
  for (double l : labels.span()) {
    if (l < 0.0 || l >= static_cast<double>(d.spec.classes)) throw LabelError("dataset label out of range");
    d.labels.push_back(static_cast<std::size_t>(l));
  }
  return d;
}

void write_metrics_csv(std::ostream& out, const std::vector<MetricRow>& rows) {
  out << "step,loss,eval_accuracy,peak_elements\n";
  char buf[64];
  for (const MetricRow& r : rows) {
    std::snprintf(buf, sizeof buf, "%.17g", r.loss);
    out << r.step << ',' << buf << ',';
    if (r.eval_accuracy) {
      std::snprintf(buf, sizeof buf, "%.17g", *r.eval_accuracy);
      out << buf;
    }
    out << ',' << r.peak_elements << '\n';
  }
}

void save_metrics_csv(const std::string& path, const std::vector<MetricRow>& rows) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot open " + path + " for writing");
  write_metrics_csv(out, rows);
}

std::vector<std::size_t> zero_shot_predict(const EncoderNet& f, const EncoderNet& g,
                                           const Tensor& images, const Tensor& prompts) {
  const Tensor x = encoders::forward(f, images, nullptr);
  const Tensor p = encoders::forward(g, prompts, nullptr);
  const Tensor s = matmul_nt(x, p);
  std::vector<std::size_t> pred(s.rows());
  for (std::size_t i = 0; i < s.rows(); ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < s.cols(); ++j) {
      if (s.at(i, j) > s.at(i, best)) best = j;
    }
    pred[i] = best;
  }
  return pred;
}

double zero_shot_eval(const EncoderNet& f, const EncoderNet& g, const Tensor& images,
                      const std::vector<std::size_t>& labels, const Tensor& prompts) {
  if (images.rank() == 0 || labels.size() != images.dim(0)) {
    throw DimensionError("one label per evaluation image is required");
  }
  if (labels.empty()) throw DataError("empty evaluation set");
  const std::size_t classes = prompts.rank() == 0 ? 0 : prompts.dim(0);
  for (std::size_t l : labels) {
    if (l >= classes) {
      throw LabelError("label " + std::to_string(l) + " has no prompt (" +
                       std::to_string(classes) + " prompts)");
    }
  }
  const std::vector<std::size_t> pred = zero_shot_predict(f, g, images, prompts);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == labels[i] ? 1 : 0;
  return static_cast<double>(correct) / static_cast<double>(labels.size());
}

TrainResult train(const TrainConfig& cfg, const SyntheticPairSet& data, const ModelState* init) {
  cfg.validate();
  check_data(cfg, data);
  const TrainSettings& ts = cfg.train;
  const bool hybrid = ts.schedule == Schedule::kHybridFinetune;
  if (hybrid && !init) {
    throw ScheduleError("hybrid-finetune needs a checkpoint from pretrain-then-text");
  }
  if (hybrid && init->produced_by != Schedule::kPretrainThenText) {
    throw ScheduleError("hybrid-finetune must start from a pretrain-then-text checkpoint, got " +
                        to_string(init->produced_by));
  }
  if (!hybrid && init) {
    throw ScheduleError(to_string(ts.schedule) + " starts from fresh weights; no checkpoint expected");
  }

  const Rng root(ts.seed, 0x747261696e);
  Rng init_rng = root.split(1);
  Rng batch_rng = root.split(2);
  TrainResult result{{},
                     init ? *init
                          : ModelState{make_image_encoder(cfg, init_rng),
                                       make_text_encoder(cfg, init_rng), ts.schedule},
                     0.0,
                     false};
  ModelState& m = result.model;
  const SyntheticPairSet eval = draw_split(data.spec, data.prototypes, ts.eval_size, 1);
  const Tensor prompts = data.class_prompts();

  optim::SlotConfig sc;
  sc.beta1 = ts.beta1;
  sc.beta2 = ts.beta2;
  sc.factorized = ts.factorized;
  sc.bf16_v1 = ts.precision_emulation;

  bool correction = ts.variance_correction;
  if (correction && ts.replicas < 2) {
    std::cerr << "warning: variance correction needs replicas >= 2; correction disabled\n";
    correction = false;
  }
  result.variance_correction_active = correction;

  std::size_t global_step = 0;

  if (ts.schedule == Schedule::kPretrainThenText) {
    encoders::ClassHead head(cfg.model.num_classes, cfg.model.embed_dim, init_rng);
    optim::MomentSlots slots_f = optim::MomentSlots::for_net(m.image, sc);
    optim::MomentSlots slots_h({head.weight.shape()}, sc);
    double initial = 0.0;
    for (std::size_t s = 0; s < ts.pretrain_steps; ++s) {
      const std::vector<std::size_t> rows = sample_rows(batch_rng, data.size(), ts.batch_size);
      std::vector<std::size_t> labels(rows.size());
      for (std::size_t r = 0; r < rows.size(); ++r) labels[r] = data.labels[rows[r]];
      MemoryLedger ledger;
      encoders::PassOptions po;
      po.ledger = &ledger;
      encoders::ActivationTape tape(encoders::TapePolicy::save_all(m.image));
      const Tensor emb = encoders::forward(m.image, data.gather_images(rows), &tape, po);
      const encoders::ClassifyResult cr = encoders::classify_loss_grad(head, emb, labels);
      const encoders::ParamGrads gf = encoders::backward(m.image, tape, cr.embedding_grad, po);
      if (s == 0) initial = cr.loss;
      check_divergence(cr.loss, initial, global_step, "pretraining");
      const double lr = learning_rate(s, ts.pretrain_steps, ts.warmup, ts.lr_peak, ts.lr_min,
                                      ts.pretrain_decay);
      optim::fused_v1_update(slots_f, gf, 1, 1);
      optim::fused_v2_update(slots_f, gf, {}, 1, 1);
      optim::adafactorw_step(m.image, slots_f, lr, ts.weight_decay);
      const encoders::ParamGrads gh{cr.head_grad};
      optim::fused_v1_update(slots_h, gh, 1, 1);
      optim::fused_v2_update(slots_h, gh, {}, 1, 1);
      optim::adafactorw_apply({&head.weight}, slots_h, lr, ts.weight_decay);
      result.metrics.push_back({global_step++, cr.loss, std::nullopt, ledger.working_peak()});
    }
  }

  const bool train_img = ts.schedule != Schedule::kPretrainThenText;
  const double lr_scale = hybrid ? ts.finetune_lr_scale : 1.0;
  std::optional<optim::MomentSlots> slots_f;
  if (train_img) slots_f.emplace(optim::MomentSlots::for_net(m.image, sc));
  optim::MomentSlots slots_g = optim::MomentSlots::for_net(m.text, sc);
  const auto plan = microbatch::BatchPlan::make(ts.batch_size, ts.microbatch_img,
                                                ts.microbatch_txt, ts.replicas);
  double initial = 0.0;
  for (std::size_t s = 0; s < ts.steps; ++s) {
    const std::vector<std::size_t> rows = sample_rows(batch_rng, data.size(), ts.batch_size);
    const microbatch::PairBatch batch = data.gather(rows);
    MemoryLedger ledger;
    microbatch::EngineOptions opts;
    opts.ledger = &ledger;
    opts.train_img = train_img;
    auto sink = [&](const microbatch::MicrobatchGrad& mg) {
      optim::MomentSlots& slots = mg.tower == microbatch::Tower::kImage ? *slots_f : slots_g;
      optim::fused_v1_update(slots, mg.grads, mg.index, mg.count);
      encoders::ParamGrads var;
      if (correction) var = optim::estimate_microbatch_variance({mg.replica_grads});
      optim::fused_v2_update(slots, mg.grads, var, mg.index, mg.count);
    };
    const microbatch::StepResult sr =
        microbatch::microbatch_gradients(m.image, m.text, batch, plan, ts.temperature, sink, opts);
    if (s == 0) initial = sr.loss;
    check_divergence(sr.loss, initial, global_step, "contrastive training");
    const double lr =
        lr_scale * learning_rate(s, ts.steps, ts.warmup, ts.lr_peak, ts.lr_min, ts.decay);
    if (train_img) optim::adafactorw_step(m.image, *slots_f, lr, ts.weight_decay);
    optim::adafactorw_step(m.text, slots_g, lr, ts.weight_decay);

    MetricRow row{global_step++, sr.loss, std::nullopt, ledger.working_peak()};
    const bool last = s + 1 == ts.steps;
    if (last || (ts.eval_every > 0 && (s + 1) % ts.eval_every == 0)) {
      row.eval_accuracy = zero_shot_eval(m.image, m.text, eval.images, eval.labels, prompts);
      if (last) result.final_accuracy = *row.eval_accuracy;
    }
    result.metrics.push_back(row);
  }
  m.produced_by = ts.schedule;
  return result;
}

double median(std::vector<double> v) {
  if (v.empty()) throw DataError("median of an empty set");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::vector<ScaleRow> scale_batch_experiment(const TrainConfig& base,
                                             const std::vector<std::size_t>& batches,
                                             std::size_t budget,
                                             const std::vector<std::uint64_t>& seeds) {
  if (batches.empty() || seeds.empty()) throw ConfigError("need at least one batch size and seed");
  for (std::size_t b : batches) {
    if (b == 0 || budget % b != 0) {
      throw ConfigError("examples budget " + std::to_string(budget) +
                        " is not a whole number of steps at batch size " + std::to_string(b));
    }
  }
  std::vector<ScaleRow> rows;
  for (std::uint64_t seed : seeds) {
    TrainConfig data_cfg = base;
    data_cfg.data.seed = base.data.seed + seed;
    const SyntheticPairSet data = gen_data(data_cfg.data);
    for (std::size_t b : batches) {
      TrainConfig c = data_cfg;
      c.train.schedule = Schedule::kContrastiveScratch;
      c.train.batch_size = b;
      c.train.steps = budget / b;
      c.train.seed = base.train.seed + seed;
      // Warmup keeps its share of the run.
      c.train.warmup = base.train.warmup * c.train.steps / base.train.steps;
      if (b % c.train.microbatch_img != 0) c.train.microbatch_img = b;
      if (b % c.train.microbatch_txt != 0) c.train.microbatch_txt = b;
      c.train.eval_every = 0;
      const TrainResult r = train(c, data);
      rows.push_back({b, c.train.steps, seed, c.train.steps * b, r.final_accuracy});
    }
  }
  return rows;
}

void write_scale_csv(std::ostream& out, const std::vector<ScaleRow>& rows) {
  out << "batch_size,steps,seed,examples_seen,accuracy\n";
  for (const ScaleRow& r : rows) {
    out << r.batch << ',' << r.steps << ',' << r.seed << ',' << r.examples_seen << ','
        << r.accuracy << '\n';
  }
}

}  // namespace bsc::harness
