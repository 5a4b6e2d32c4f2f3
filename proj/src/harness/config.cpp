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

#include "bsc/harness/config.hpp"

#include <cmath>
#include <fstream>
#include <numbers>
#include <set>

#include "bsc/errors.hpp"

namespace bsc::harness {

using nlohmann::json;

namespace {

void reject_unknown(const json& section, const char* name, const std::set<std::string>& known) {
  if (!section.is_object()) throw ConfigError(std::string("config section '") + name + "' must be an object");
  for (const auto& [key, value] : section.items()) {
    if (!known.count(key)) {
      throw ConfigError(std::string("unknown field '") + key + "' in config section '" + name + "'");
    }
  }
}

template <typename T>
void read(const json& section, const char* key, T& out) {
  if (!section.contains(key)) return;
  try {
    out = section.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config field '") + key + "': " + e.what());
  }
}

std::string norm_name(encoders::Norm n) {
  switch (n) {
    case encoders::Norm::kNone: return "none";
    case encoders::Norm::kLayerNorm: return "layernorm";
    case encoders::Norm::kBatchNorm: return "batchnorm";
  }
  return "none";
}

encoders::Norm parse_norm(const std::string& s) {
  if (s == "none") return encoders::Norm::kNone;
  if (s == "layernorm") return encoders::Norm::kLayerNorm;
  if (s == "batchnorm") return encoders::Norm::kBatchNorm;
  throw ConfigError("unknown norm '" + s + "'");
}

}  // namespace

std::string to_string(Schedule s) {
  switch (s) {
    case Schedule::kContrastiveScratch: return "contrastive-scratch";
    case Schedule::kPretrainThenText: return "pretrain-then-text";
    case Schedule::kHybridFinetune: return "hybrid-finetune";
  }
  return "unknown";
}

Schedule parse_schedule(const std::string& s) {
  if (s == "contrastive-scratch") return Schedule::kContrastiveScratch;
  if (s == "pretrain-then-text") return Schedule::kPretrainThenText;
  if (s == "hybrid-finetune") return Schedule::kHybridFinetune;
  throw ConfigError("unknown schedule '" + s + "'");
}

std::string to_string(Decay d) { return d == Decay::kCosine ? "cosine" : "linear"; }

Decay parse_decay(const std::string& s) {
  if (s == "cosine") return Decay::kCosine;
  if (s == "linear") return Decay::kLinear;
  throw ConfigError("unknown decay '" + s + "'");
}

void TrainConfig::validate() const {
  data.validate();
  const TrainSettings& t = train;
  if (model.depth == 0 || model.width == 0 || model.embed_dim == 0) {
    throw ConfigError("model depth, width and embed_dim must be positive");
  }
  if (model.num_classes < data.classes) {
    throw ConfigError("model.num_classes must cover data.classes");
  }
  if (t.batch_size == 0 || t.steps == 0) throw ConfigError("batch_size and steps must be positive");
  if (t.batch_size > data.size) throw ConfigError("batch_size exceeds the dataset size");
  if (t.microbatch_img == 0 || t.microbatch_txt == 0 || t.replicas == 0 ||
      t.batch_size % t.microbatch_img != 0 || t.batch_size % t.microbatch_txt != 0 ||
      t.microbatch_img % t.replicas != 0 || t.microbatch_txt % t.replicas != 0) {
    throw ConfigError("microbatch sizes must divide batch_size and replicas must divide both");
  }
  if (!(t.lr_peak > 0.0) || t.lr_min < 0.0 || t.lr_min > t.lr_peak) {
    throw ConfigError("need 0 <= lr_min <= lr_peak and lr_peak > 0");
  }
  if (!(t.beta1 >= 0.0 && t.beta1 < 1.0 && t.beta2 >= 0.0 && t.beta2 < 1.0)) {
    throw ConfigError("beta1 and beta2 must lie in [0, 1)");
  }
  if (t.weight_decay < 0.0) throw ConfigError("weight_decay must be non-negative");
  if (!(t.temperature > 0.0)) throw ConfigError("temperature must be positive");
  if (!(t.finetune_lr_scale > 0.0)) throw ConfigError("finetune_lr_scale must be positive");
  if (t.eval_size == 0) throw ConfigError("eval_size must be positive");
  if (t.schedule == Schedule::kPretrainThenText && t.pretrain_steps == 0) {
    throw ConfigError("pretrain-then-text needs pretrain_steps > 0");
  }
}

TrainConfig config_from_json(const json& j) {
  TrainConfig c;
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  reject_unknown(j, "<root>", {"model", "train", "data"});
  if (j.contains("model")) {
    const json& m = j.at("model");
    reject_unknown(m, "model", {"depth", "width", "embed_dim", "num_classes", "norm"});
    read(m, "depth", c.model.depth);
    read(m, "width", c.model.width);
    read(m, "embed_dim", c.model.embed_dim);
    read(m, "num_classes", c.model.num_classes);
    std::string norm = norm_name(c.model.norm);
    read(m, "norm", norm);
    c.model.norm = parse_norm(norm);
  }
  if (j.contains("data")) {
    const json& d = j.at("data");
    reject_unknown(d, "data", {"classes", "size", "input_dim", "noise", "seed", "tokens", "token_dim"});
    read(d, "classes", c.data.classes);
    read(d, "size", c.data.size);
    read(d, "input_dim", c.data.input_dim);
    read(d, "noise", c.data.noise);
    read(d, "seed", c.data.seed);
    read(d, "tokens", c.data.tokens);
    read(d, "token_dim", c.data.token_dim);
    if (!(j.contains("model") && j.at("model").contains("num_classes"))) c.model.num_classes = c.data.classes;
  }
  if (j.contains("train")) {
    const json& t = j.at("train");
    reject_unknown(t, "train",
                   {"schedule", "batch_size", "microbatch_img", "microbatch_txt", "replicas",
                    "steps", "warmup", "lr_peak", "lr_min", "decay", "beta1", "beta2",
                    "weight_decay", "temperature", "variance_correction", "precision_emulation",
                    "factorized", "seed", "pretrain_steps", "pretrain_decay", "finetune_lr_scale",
                    "eval_every", "eval_size"});
    TrainSettings& s = c.train;
    std::string schedule = to_string(s.schedule);
    read(t, "schedule", schedule);
    s.schedule = parse_schedule(schedule);
    read(t, "batch_size", s.batch_size);
    read(t, "microbatch_img", s.microbatch_img);
    read(t, "microbatch_txt", s.microbatch_txt);
    read(t, "replicas", s.replicas);
    read(t, "steps", s.steps);
    read(t, "warmup", s.warmup);
    read(t, "lr_peak", s.lr_peak);
    read(t, "lr_min", s.lr_min);
    std::string decay = to_string(s.decay);
    read(t, "decay", decay);
    s.decay = parse_decay(decay);
    read(t, "beta1", s.beta1);
    read(t, "beta2", s.beta2);
    read(t, "weight_decay", s.weight_decay);
    read(t, "temperature", s.temperature);
    read(t, "variance_correction", s.variance_correction);
    read(t, "precision_emulation", s.precision_emulation);
    read(t, "factorized", s.factorized);
    read(t, "seed", s.seed);
    read(t, "pretrain_steps", s.pretrain_steps);
    std::string pdecay = to_string(s.pretrain_decay);
    read(t, "pretrain_decay", pdecay);
    s.pretrain_decay = parse_decay(pdecay);
    read(t, "finetune_lr_scale", s.finetune_lr_scale);
    read(t, "eval_every", s.eval_every);
    read(t, "eval_size", s.eval_size);
  }
  c.validate();
  return c;
}

json config_to_json(const TrainConfig& c) {
  const TrainSettings& s = c.train;
  return json{
      {"model",
       {{"depth", c.model.depth},
        {"width", c.model.width},
        {"embed_dim", c.model.embed_dim},
        {"num_classes", c.model.num_classes},
        {"norm", norm_name(c.model.norm)}}},
      {"train",
       {{"schedule", to_string(s.schedule)},
        {"batch_size", s.batch_size},
        {"microbatch_img", s.microbatch_img},
        {"microbatch_txt", s.microbatch_txt},
        {"replicas", s.replicas},
        {"steps", s.steps},
        {"warmup", s.warmup},
        {"lr_peak", s.lr_peak},
        {"lr_min", s.lr_min},
        {"decay", to_string(s.decay)},
        {"beta1", s.beta1},
        {"beta2", s.beta2},
        {"weight_decay", s.weight_decay},
        {"temperature", s.temperature},
        {"variance_correction", s.variance_correction},
        {"precision_emulation", s.precision_emulation},
        {"factorized", s.factorized},
        {"seed", s.seed},
        {"pretrain_steps", s.pretrain_steps},
        {"pretrain_decay", to_string(s.pretrain_decay)},
        {"finetune_lr_scale", s.finetune_lr_scale},
        {"eval_every", s.eval_every},
        {"eval_size", s.eval_size}}},
      {"data",
       {{"classes", c.data.classes},
        {"size", c.data.size},
        {"input_dim", c.data.input_dim},
        {"noise", c.data.noise},
        {"seed", c.data.seed},
        {"tokens", c.data.tokens},
        {"token_dim", c.data.token_dim}}}};
}

TrainConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError("config " + path + " is not valid JSON: " + e.what());
  }
  return config_from_json(j);
}

double learning_rate(std::size_t step, std::size_t total, std::size_t warmup, double peak,
                     double floor, Decay decay) {
  if (step < warmup) {
    return peak * static_cast<double>(step + 1) / static_cast<double>(warmup);
  }
  const std::size_t span = total > warmup ? total - warmup : 1;
  const double progress =
      std::min(1.0, static_cast<double>(step - warmup) / static_cast<double>(span));
  const double shape = decay == Decay::kCosine
                           ? 0.5 * (1.0 + std::cos(std::numbers::pi * progress))
                           : 1.0 - progress;
  return floor + (peak - floor) * shape;
}

encoders::EncoderNet make_image_encoder(const TrainConfig& c, Rng& rng) {
  return encoders::EncoderNet::mlp(c.data.input_dim, c.model.width, c.model.depth,
                                   c.model.embed_dim, c.model.norm, encoders::InputKind::kVectors,
                                   rng);
}

encoders::EncoderNet make_text_encoder(const TrainConfig& c, Rng& rng) {
  return encoders::EncoderNet::mlp(c.data.token_dim, c.model.width, c.model.depth,
                                   c.model.embed_dim, c.model.norm,
                                   encoders::InputKind::kTokenSequences, rng);
}

}  // namespace bsc::harness
