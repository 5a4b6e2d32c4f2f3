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

#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "bsc/contrastive/contrastive.hpp"
#include "bsc/errors.hpp"
#include "bsc/microbatch/engine.hpp"
#include "bsc/numerics/ops.hpp"
#include "helpers.hpp"

using namespace bsc;
using namespace bsc::microbatch;
using encoders::EncoderNet;
using encoders::InputKind;
using encoders::Norm;
using bsc::testing::fd_error;
using bsc::testing::numeric_grad;

namespace {

struct Towers {
  EncoderNet f;
  EncoderNet g;
};

Towers make_towers(std::uint64_t seed, Norm norm = Norm::kLayerNorm, std::size_t d = 6,
                   std::size_t depth = 3) {
  Rng rng(seed, 1);
  return {EncoderNet::mlp(5, 8, depth, d, norm, InputKind::kVectors, rng),
          EncoderNet::mlp(4, 8, depth, d, norm, InputKind::kTokenSequences, rng)};
}

PairBatch make_batch(std::size_t b, std::uint64_t seed) {
  Rng rng(seed, 2);
  return {rng.normal_tensor({b, 5}), rng.normal_tensor({b, 3, 4})};
}

double worst_error(const encoders::ParamGrads& a, const encoders::ParamGrads& b) {
  double w = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) w = std::max(w, relative_l2_error(a[i], b[i]));
  return w;
}

}  // namespace

TEST_CASE("plan validation") {
  CHECK_THROWS_AS(BatchPlan::make(8, 3, 8), ConfigError);
  CHECK_THROWS_AS(BatchPlan::make(8, 8, 3), ConfigError);
  CHECK_THROWS_AS(BatchPlan::make(8, 4, 8, 3), ConfigError);
  CHECK_THROWS_AS(BatchPlan::make(0, 1, 1), ConfigError);
  const BatchPlan p = BatchPlan::make(16, 4, 8, 2);
  CHECK(p.k_img() == 4);
  CHECK(p.k_txt() == 2);

  const Towers t = make_towers(0);
  CHECK_THROWS_AS(embed_phase(t.f, t.g, make_batch(6, 0), BatchPlan::make(8, 4, 4)), Error);
}

TEST_CASE("embed phase is invariant to chunking") {
  const Towers t = make_towers(1);
  const PairBatch batch = make_batch(8, 1);
  const Tensor direct_x = encoders::forward(t.f, batch.images, nullptr);
  const Tensor direct_y = encoders::forward(t.g, batch.texts, nullptr);
  for (std::size_t m : {1, 2, 4, 8}) {
    const EmbeddingBuffers buf = embed_phase(t.f, t.g, batch, BatchPlan::make(8, m, m));
    CHECK(buf.x.bitwise_equal(direct_x));
    CHECK(buf.y.bitwise_equal(direct_y));
    CHECK(std::all_of(buf.x_filled.begin(), buf.x_filled.end(), [](bool b) { return b; }));
    CHECK(std::all_of(buf.y_filled.begin(), buf.y_filled.end(), [](bool b) { return b; }));
  }
}

TEST_CASE("embed phase keeps activations to one microbatch") {
  const Towers t = make_towers(2);
  const PairBatch batch = make_batch(32, 2);
  MemoryLedger one, all;
  EngineOptions o1, o2;
  o1.ledger = &one;
  o2.ledger = &all;
  embed_phase(t.f, t.g, batch, BatchPlan::make(32, 4, 4), o1);
  embed_phase(t.f, t.g, batch, BatchPlan::make(32, 32, 32), o2);
  const auto pf = encoders::profile_pass(t.f, encoders::TapePolicy::save_all(t.f),
                                         batch.images.slice_rows(0, 1));
  const auto pg = encoders::profile_pass(t.g, encoders::TapePolicy::save_all(t.g),
                                         batch.texts.slice_rows(0, 1));
  CHECK(one.peak(MemCategory::kActivations) ==
        4 * std::max(pf.forward_untaped, pg.forward_untaped));
  CHECK(all.peak(MemCategory::kActivations) ==
        32 * std::max(pf.forward_untaped, pg.forward_untaped));
  CHECK(one.live(MemCategory::kActivations) == 0);
}

TEST_CASE("microbatched gradients match the monolithic oracle") {
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    const Towers t = make_towers(seed + 10);
    const PairBatch batch = make_batch(8, seed);
    const OracleResult oracle = monolithic_oracle(t.f, t.g, batch, 0.5);

    GradAverager whole;
    const StepResult one = microbatch_gradients(t.f, t.g, batch, BatchPlan::make(8, 8, 8), 0.5,
                                                std::ref(whole));
    CHECK(one.loss == oracle.loss);
    for (std::size_t i = 0; i < oracle.grad_img.size(); ++i) {
      CHECK(whole.img[i].bitwise_equal(oracle.grad_img[i]));
    }
    for (std::size_t i = 0; i < oracle.grad_txt.size(); ++i) {
      CHECK(whole.txt[i].bitwise_equal(oracle.grad_txt[i]));
    }

    for (std::size_t m : {1, 2, 4}) {
      GradAverager avg;
      const StepResult r = microbatch_gradients(t.f, t.g, batch, BatchPlan::make(8, m, 8 / m),
                                                0.5, std::ref(avg));
      CAPTURE(m);
      CHECK(std::abs(r.loss - oracle.loss) <= 1e-12 * std::abs(oracle.loss));
      CHECK(worst_error(avg.img, oracle.grad_img) <= 1e-10);
      CHECK(worst_error(avg.txt, oracle.grad_txt) <= 1e-10);
    }
  }
}

TEST_CASE("batchnorm breaks microbatch exactness") {
  const Towers t = make_towers(20, Norm::kBatchNorm);
  const PairBatch batch = make_batch(8, 20);
  GradAverager small, full;
  microbatch_gradients(t.f, t.g, batch, BatchPlan::make(8, 2, 2), 0.5, std::ref(small));
  microbatch_gradients(t.f, t.g, batch, BatchPlan::make(8, 8, 8), 0.5, std::ref(full));
  CHECK(std::max(worst_error(small.img, full.img), worst_error(small.txt, full.txt)) > 1e-3);
}

TEST_CASE("oracle against finite differences") {
  Towers t = make_towers(30, Norm::kLayerNorm, 3, 2);
  const PairBatch batch = make_batch(4, 30);
  const OracleResult r = monolithic_oracle(t.f, t.g, batch, 0.5);
  const auto loss = [&] {
    const Tensor x = encoders::forward(t.f, batch.images, nullptr);
    const Tensor y = encoders::forward(t.g, batch.texts, nullptr);
    return contrastive::contrastive_loss(contrastive::similarity(x, y, 0.5));
  };
  CHECK(r.loss == doctest::Approx(loss()).epsilon(1e-15));
  for (std::size_t i = 0; i < t.f.num_params(); ++i) {
    CHECK(fd_error(r.grad_img[i], numeric_grad(t.f.mutable_param(i), loss)) <= 1e-6);
  }
  for (std::size_t i = 0; i < t.g.num_params(); ++i) {
    CHECK(fd_error(r.grad_txt[i], numeric_grad(t.g.mutable_param(i), loss)) <= 1e-6);
  }
}

TEST_CASE("oracle loss is invariant to permuting the pairs") {
  const Towers t = make_towers(31);
  const PairBatch batch = make_batch(6, 31);
  const std::vector<std::size_t> perm{3, 0, 5, 1, 4, 2};
  PairBatch shuffled{Tensor({6, 5}), Tensor({6, 3, 4})};
  for (std::size_t i = 0; i < 6; ++i) {
    shuffled.images.assign_rows(i, batch.images.slice_rows(perm[i], perm[i] + 1));
    shuffled.texts.assign_rows(i, batch.texts.slice_rows(perm[i], perm[i] + 1));
  }
  CHECK(monolithic_oracle(t.f, t.g, batch, 0.3).loss ==
        doctest::Approx(monolithic_oracle(t.f, t.g, shuffled, 0.3).loss).epsilon(1e-14));
}

TEST_CASE("aligned towers beat the uniform loss") {
  Rng rng(0);
  EncoderNet f(3, {encoders::LayerSpec{3}}, InputKind::kVectors, rng);
  EncoderNet g(3, {encoders::LayerSpec{3}}, InputKind::kVectors, rng);
  f.mutable_param(0) = Tensor::identity(3);
  g.mutable_param(0) = Tensor::identity(3);
  const PairBatch batch{Tensor::identity(3), Tensor::identity(3)};
  CHECK(monolithic_oracle(f, g, batch, 0.1).loss < std::log(3.0));
}

TEST_CASE("yield order, pass counts and replicas") {
  const Towers t = make_towers(40);
  const PairBatch batch = make_batch(16, 40);
  std::vector<std::pair<Tower, std::size_t>> order;
  double worst_replica = 0.0;
  const StepResult r = microbatch_gradients(
      t.f, t.g, batch, BatchPlan::make(16, 4, 8, 2), 0.5, [&](const MicrobatchGrad& m) {
        order.emplace_back(m.tower, m.index);
        REQUIRE(m.replica_grads.size() == 2);
        for (std::size_t p = 0; p < m.grads.size(); ++p) {
          const Tensor mean =
              scale(add(m.replica_grads[0][p], m.replica_grads[1][p]), 0.5);
          worst_replica = std::max(worst_replica, relative_l2_error(mean, m.grads[p]));
        }
      });
  const std::vector<std::pair<Tower, std::size_t>> want{
      {Tower::kImage, 1}, {Tower::kImage, 2}, {Tower::kImage, 3}, {Tower::kImage, 4},
      {Tower::kText, 1},  {Tower::kText, 2}};
  CHECK(order == want);
  CHECK(worst_replica <= 1e-12);
  CHECK(r.stats.passes_img(16) == 2.0);
  CHECK(r.stats.passes_txt(16) == 2.0);

  // Replica-split gradients still average to the oracle.
  GradAverager avg;
  microbatch_gradients(t.f, t.g, batch, BatchPlan::make(16, 4, 8, 4), 0.5, std::ref(avg));
  const OracleResult oracle = monolithic_oracle(t.f, t.g, batch, 0.5);
  CHECK(worst_error(avg.img, oracle.grad_img) <= 1e-10);
  CHECK(worst_error(avg.txt, oracle.grad_txt) <= 1e-10);
}

TEST_CASE("a frozen tower is embedded once and yields nothing") {
  const Towers t = make_towers(41);
  const PairBatch batch = make_batch(8, 41);
  EngineOptions opts;
  opts.train_img = false;
  std::size_t image_yields = 0;
  const StepResult r = microbatch_gradients(
      t.f, t.g, batch, BatchPlan::make(8, 2, 4), 0.5,
      [&](const MicrobatchGrad& m) { image_yields += m.tower == Tower::kImage ? 1 : 0; }, opts);
  CHECK(image_yields == 0);
  CHECK(r.stats.passes_img(8) == 1.0);
  CHECK(r.stats.passes_txt(8) == 2.0);
}

TEST_CASE("averager rejects out-of-order yields") {
  GradAverager avg;
  MicrobatchGrad m;
  m.index = 2;
  m.count = 2;
  m.grads = {Tensor::zeros({1})};
  CHECK_THROWS_AS(avg(m), SequenceError);
}

TEST_CASE("pipeline activation peak is constant in B at fixed M") {
  const Towers t = make_towers(50);
  std::int64_t act = -1;
  for (std::size_t b : {16, 32, 64}) {
    MemoryLedger ledger;
    EngineOptions opts;
    opts.ledger = &ledger;
    microbatch_gradients(t.f, t.g, make_batch(b, 50), BatchPlan::make(b, 4, 4), 0.5,
                         [](const MicrobatchGrad&) {}, opts);
    const std::int64_t a = ledger.peak(MemCategory::kActivations);
    if (act >= 0) CHECK(a == act);
    act = a;
    CHECK(ledger.peak(MemCategory::kSimilarity) == static_cast<std::int64_t>(2 * b * b));
    CHECK(ledger.live() == 0);
  }
}
