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

#ifndef BSC_HARNESS_CONFIG_HPP_
#define BSC_HARNESS_CONFIG_HPP_

#include <cstddef>
#include <cstdint>
#include <string>

#include <json.hpp>

#include "bsc/encoders/encoder.hpp"
#include "bsc/harness/data.hpp"
#include "bsc/numerics/rng.hpp"

namespace bsc::harness {

enum class Schedule : std::uint8_t { kContrastiveScratch, kPretrainThenText, kHybridFinetune };
enum class Decay : std::uint8_t { kCosine, kLinear };

std::string to_string(Schedule s);
Schedule parse_schedule(const std::string& s);
std::string to_string(Decay d);
Decay parse_decay(const std::string& s);

struct ModelConfig {
  std::size_t depth = 2;
  std::size_t width = 64;
  std::size_t embed_dim = 16;
  std::size_t num_classes = 8;  // pretraining head
  encoders::Norm norm = encoders::Norm::kLayerNorm;
};

struct TrainSettings {
  Schedule schedule = Schedule::kContrastiveScratch;
  std::size_t batch_size = 64;
  std::size_t microbatch_img = 16;
  std::size_t microbatch_txt = 32;
  std::size_t replicas = 1;
  std::size_t steps = 300;
  std::size_t warmup = 20;
  double lr_peak = 3e-3;
  double lr_min = 1e-5;
  Decay decay = Decay::kCosine;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double weight_decay = 1e-4;
  double temperature = 0.1;
  bool variance_correction = false;
  bool precision_emulation = false;
  bool factorized = true;
  std::uint64_t seed = 0;
  // Schedule details beyond the core surface.
  std::size_t pretrain_steps = 200;
  Decay pretrain_decay = Decay::kLinear;
  double finetune_lr_scale = 0.1;
  std::size_t eval_every = 50;
  std::size_t eval_size = 512;
};

struct TrainConfig {
  ModelConfig model;
  TrainSettings train;
  DataSpec data;

  // Throws ConfigError on any inconsistent or non-positive field.
  void validate() const;
};

// Missing fields keep their defaults; unknown fields are rejected.
TrainConfig config_from_json(const nlohmann::json& j);
nlohmann::json config_to_json(const TrainConfig& c);
TrainConfig load_config(const std::string& path);

// Learning rate for 0-based step `step` of `total`: linear warmup to the
// peak over `warmup` steps, then cosine or linear decay to the floor.
double learning_rate(std::size_t step, std::size_t total, std::size_t warmup, double peak,
                     double floor, Decay decay);

encoders::EncoderNet make_image_encoder(const TrainConfig& c, Rng& rng);
encoders::EncoderNet make_text_encoder(const TrainConfig& c, Rng& rng);

}  // namespace bsc::harness

#endif  // BSC_HARNESS_CONFIG_HPP_
