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

#include "bsc/harness/data.hpp"

#include <string>

#include "bsc/errors.hpp"

namespace bsc::harness {

void DataSpec::validate() const {
  if (classes < 2) throw ConfigError("need at least two classes");
  if (size < classes) {
    throw DataError("dataset of " + std::to_string(size) + " pairs cannot cover " +
                    std::to_string(classes) + " classes");
  }
  if (input_dim == 0 || tokens == 0 || token_dim == 0) {
    throw ConfigError("data dimensions must be positive");
  }
  if (!(noise >= 0.0)) throw ConfigError("noise scale must be non-negative");
}

Prototypes make_prototypes(const DataSpec& spec) {
  spec.validate();
  Rng rng(spec.seed, 0x70726f74);
  Prototypes p;
  p.images = rng.normal_tensor({spec.classes, spec.input_dim});
  p.tokens = rng.normal_tensor({spec.classes, spec.tokens, spec.token_dim});
  return p;
}

SyntheticPairSet draw_split(const DataSpec& spec, const Prototypes& protos, std::size_t size,
                            std::uint64_t split) {
  spec.validate();
  if (size == 0) throw DataError("split must hold at least one pair");
  SyntheticPairSet d;
  d.spec = spec;
  d.spec.size = size;
  d.prototypes = protos;
  d.images = Tensor({size, spec.input_dim});
  d.texts = Tensor({size, spec.tokens, spec.token_dim});
  d.labels.resize(size);
  const Rng base(spec.seed, 0x70616972 + split);
  const std::size_t img_w = spec.input_dim;
  const std::size_t txt_w = spec.tokens * spec.token_dim;
  for (std::size_t i = 0; i < size; ++i) {
    const std::size_t c = i % spec.classes;
    d.labels[i] = c;
    Rng rng = base.split(i);
    for (std::size_t j = 0; j < img_w; ++j) {
      d.images[i * img_w + j] = protos.images[c * img_w + j] + spec.noise * rng.normal();
    }
    for (std::size_t j = 0; j < txt_w; ++j) {
      d.texts[i * txt_w + j] = protos.tokens[c * txt_w + j] + spec.noise * rng.normal();
    }
  }
  return d;
}

SyntheticPairSet gen_data(const DataSpec& spec) {
  return draw_split(spec, make_prototypes(spec), spec.size, 0);
}

Tensor SyntheticPairSet::gather_images(const std::vector<std::size_t>& rows) const {
  Tensor out({rows.size(), images.dim(1)});
  for (std::size_t r = 0; r < rows.size(); ++r) out.assign_rows(r, images.slice_rows(rows[r], rows[r] + 1));
  return out;
}

microbatch::PairBatch SyntheticPairSet::gather(const std::vector<std::size_t>& rows) const {
  Tensor t({rows.size(), texts.dim(1), texts.dim(2)});
  for (std::size_t r = 0; r < rows.size(); ++r) t.assign_rows(r, texts.slice_rows(rows[r], rows[r] + 1));
  return microbatch::PairBatch{gather_images(rows), std::move(t)};
}

}  // namespace bsc::harness
