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

#ifndef BSC_HARNESS_TRAIN_HPP_
#define BSC_HARNESS_TRAIN_HPP_

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "bsc/encoders/encoder.hpp"
#include "bsc/harness/checkpoint.hpp"
#include "bsc/harness/config.hpp"
#include "bsc/harness/data.hpp"

namespace bsc::harness {

struct ModelState {
  encoders::EncoderNet image;
  encoders::EncoderNet text;
  // Schedule that produced the weights; hybrid finetuning starts only from
  // pretrain-then-text.
  Schedule produced_by = Schedule::kContrastiveScratch;
};

NamedTensors model_to_tensors(const ModelState& m);
// Needs the config to rebuild the architecture; shapes are checked.
ModelState model_from_tensors(const NamedTensors& t, const TrainConfig& c);
void save_model(const std::string& path, const ModelState& m);
ModelState load_model(const std::string& path, const TrainConfig& c);

NamedTensors dataset_to_tensors(const SyntheticPairSet& d);
SyntheticPairSet dataset_from_tensors(const NamedTensors& t);

struct MetricRow {
  std::size_t step = 0;
  double loss = 0.0;
  std::optional<double> eval_accuracy;
  std::int64_t peak_elements = 0;
};

void write_metrics_csv(std::ostream& out, const std::vector<MetricRow>& rows);
void save_metrics_csv(const std::string& path, const std::vector<MetricRow>& rows);

struct TrainResult {
  std::vector<MetricRow> metrics;
  ModelState model;
  double final_accuracy = 0.0;
  bool variance_correction_active = false;
};

// Runs the configured schedule. Hybrid finetuning requires `init` produced by
// pretrain-then-text; the other schedules refuse an `init`. Evaluation pairs
// are drawn from `data`'s prototypes with a separate noise stream.
TrainResult train(const TrainConfig& cfg, const SyntheticPairSet& data,
                  const ModelState* init = nullptr);

// argmax_j <F(x), G(prompt_j)> with ties going to the lowest j.
std::vector<std::size_t> zero_shot_predict(const encoders::EncoderNet& f,
                                           const encoders::EncoderNet& g, const Tensor& images,
                                           const Tensor& prompts);
double zero_shot_eval(const encoders::EncoderNet& f, const encoders::EncoderNet& g,
                      const Tensor& images, const std::vector<std::size_t>& labels,
                      const Tensor& prompts);

struct ScaleRow {
  std::size_t batch = 0;
  std::size_t steps = 0;
  std::uint64_t seed = 0;
  std::size_t examples_seen = 0;
  double accuracy = 0.0;
};

// One run per (B, seed) with steps = budget / B. Throws ConfigError unless
// every B divides the budget.
std::vector<ScaleRow> scale_batch_experiment(const TrainConfig& base,
                                             const std::vector<std::size_t>& batches,
                                             std::size_t budget,
                                             const std::vector<std::uint64_t>& seeds);
void write_scale_csv(std::ostream& out, const std::vector<ScaleRow>& rows);
double median(std::vector<double> v);

}  // namespace bsc::harness

#endif  // BSC_HARNESS_TRAIN_HPP_
