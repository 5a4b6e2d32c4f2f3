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

#ifndef BSC_HARNESS_DATA_HPP_
#define BSC_HARNESS_DATA_HPP_

#include <cstddef>
#include <cstdint>
#include <vector>

#include "bsc/microbatch/engine.hpp"
#include "bsc/numerics/rng.hpp"
#include "bsc/numerics/tensor.hpp"

namespace bsc::harness {

struct DataSpec {
  std::size_t classes = 8;
  std::size_t size = 1024;      // m pairs
  std::size_t input_dim = 16;   // kappa
  std::size_t tokens = 4;       // T tokens per text
  std::size_t token_dim = 16;   // d per token
  double noise = 0.5;           // sigma_data
  std::uint64_t seed = 0;

  void validate() const;
};

// Per-class prototypes shared by every split drawn from the same spec.
struct Prototypes {
  Tensor images;  // [C x kappa]
  Tensor tokens;  // [C x T x d]
};

Prototypes make_prototypes(const DataSpec& spec);

// Paired synthetic data. Image i and text i come from the same class; labels
// are kept for generation, evaluation and pretraining only.
struct SyntheticPairSet {
  DataSpec spec;
  Prototypes prototypes;
  Tensor images;  // [m x kappa]
  Tensor texts;   // [m x T x d]
  std::vector<std::size_t> labels;

  std::size_t size() const { return labels.size(); }
  microbatch::PairBatch gather(const std::vector<std::size_t>& rows) const;
  Tensor gather_images(const std::vector<std::size_t>& rows) const;
  // One noiseless prototype token sequence per class, [C x T x d].
  Tensor class_prompts() const { return prototypes.tokens; }
};

// Balanced classes (pair i has class i mod C), prototype + Gaussian noise.
SyntheticPairSet gen_data(const DataSpec& spec);
// A further split with the same prototypes and fresh noise; `split` selects
// an independent noise stream (0 is the stream gen_data uses).
SyntheticPairSet draw_split(const DataSpec& spec, const Prototypes& protos, std::size_t size,
                            std::uint64_t split);

}  // namespace bsc::harness

#endif  // BSC_HARNESS_DATA_HPP_
