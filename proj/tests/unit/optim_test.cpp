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

#include <cmath>

#include "bsc/errors.hpp"
#include "bsc/microbatch/engine.hpp"
#include "bsc/numerics/ops.hpp"
#include "bsc/optim/optim.hpp"

using namespace bsc;
using namespace bsc::optim;

namespace {

SlotConfig full_config(double beta1 = 0.9, double beta2 = 0.999) {
  SlotConfig c;
  c.beta1 = beta1;
  c.beta2 = beta2;
  c.factorized = false;
  return c;
}

ParamGrads one(const Tensor& t) { return ParamGrads{t}; }

// Runs a full K-call v1 and v2 sequence of the given microbatch gradients.
void fuse(MomentSlots& s, const std::vector<ParamGrads>& c, const std::vector<ParamGrads>& var = {}) {
  const std::size_t k = c.size();
  for (std::size_t i = 0; i < k; ++i) fused_v1_update(s, c[i], i + 1, k);
  for (std::size_t i = 0; i < k; ++i) {
    fused_v2_update(s, c[i], var.empty() ? ParamGrads{} : var[i], i + 1, k);
  }
}

}  // namespace

TEST_CASE("fused v1 hand example") {
  MomentSlots s({{1}}, full_config());
  fused_v1_update(s, one(Tensor::vector({1.0})), 1, 2);
  fused_v1_update(s, one(Tensor::vector({3.0})), 2, 2);
  CHECK(s.slot(0).v1[0] == doctest::Approx(0.2).epsilon(1e-15));
}

TEST_CASE("fused v1 equals vanilla Adam on the mean gradient") {
  Rng rng(1);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t k = std::size_t{1} << rng.below(4);
    const std::size_t n = 1 + rng.below(20);
    MomentSlots s({{n}}, full_config());
    // Start from a non-zero moment.
    const Tensor prev = rng.normal_tensor({n});
    s.mutable_slot(0).v1 = prev;
    std::vector<ParamGrads> c;
    Tensor mean({n});
    for (std::size_t i = 0; i < k; ++i) {
      c.push_back(one(rng.normal_tensor({n})));
      axpy_inplace(mean, 1.0 / static_cast<double>(k), c.back()[0]);
    }
    for (std::size_t i = 0; i < k; ++i) fused_v1_update(s, c[i], i + 1, k);
    const Tensor vanilla = add(scale(prev, 0.9), scale(mean, 0.1));
    CHECK(max_relative_error(s.slot(0).v1, vanilla) <= 1e-12);
  }
}

TEST_CASE("K = 1 is a vanilla Adam step for both moments") {
  Rng rng(2);
  MomentSlots s({{4}}, full_config());
  const Tensor g = rng.normal_tensor({4});
  fuse(s, {one(g)});
  for (std::size_t j = 0; j < 4; ++j) {
    CHECK(s.slot(0).v1[j] == (1.0 - 0.9) * g[j]);
    CHECK(s.slot(0).v2[j] == (1.0 - 0.999) * (g[j] * g[j]));
  }
}

TEST_CASE("sequence violations") {
  MomentSlots s({{2}}, full_config());
  const ParamGrads g = one(Tensor::zeros({2}));
  CHECK_THROWS_AS(fused_v1_update(s, g, 0, 2), SequenceError);
  CHECK_THROWS_AS(fused_v1_update(s, g, 3, 2), SequenceError);
  CHECK_THROWS_AS(fused_v1_update(s, g, 2, 2), SequenceError);
  fused_v1_update(s, g, 1, 2);
  CHECK_THROWS_AS(fused_v1_update(s, g, 2, 3), SequenceError);
  CHECK_THROWS_AS(fused_v1_update(s, g, 1, 2), SequenceError);
  CHECK_THROWS_AS(fused_v1_update(s, one(Tensor::zeros({3})), 2, 2), DimensionError);

  Tensor theta = Tensor::zeros({2});
  CHECK_THROWS_AS(adafactorw_apply({&theta}, s, 0.1, 0.0), SequenceError);
  fused_v1_update(s, g, 2, 2);
  CHECK_THROWS_AS(adafactorw_apply({&theta}, s, 0.1, 0.0), SequenceError);
  fused_v2_update(s, g, {}, 1, 1);
  CHECK_THROWS_AS(adafactorw_apply({&theta}, s, 0.0, 0.0), ConfigError);
  adafactorw_apply({&theta}, s, 0.1, 0.0);
  CHECK(s.step() == 1);
  CHECK_THROWS_AS(adafactorw_apply({&theta}, s, 0.1, 0.0), SequenceError);
}

TEST_CASE("microbatch variance estimate") {
  ReplicaGrads same{{one(Tensor::vector({2.0, -1.0})), one(Tensor::vector({2.0, -1.0}))}};
  const ParamGrads z = estimate_microbatch_variance(same);
  CHECK(z[0][0] == 0.0);
  CHECK(z[0][1] == 0.0);

  ReplicaGrads two{{one(Tensor::vector({1.0})), one(Tensor::vector({3.0}))}};
  CHECK(estimate_microbatch_variance(two)[0][0] == 1.0);
  CHECK(two.mean()[0][0] == 2.0);

  CHECK_THROWS_AS(estimate_microbatch_variance(ReplicaGrads{{one(Tensor::vector({1.0}))}}),
                  VarianceUnestimableError);
  CHECK_THROWS_AS(estimate_microbatch_variance(ReplicaGrads{}), VarianceUnestimableError);
}

TEST_CASE("variance estimate is unbiased for Var(g) / M") {
  // B = 64, M = 8, R = 8: each replica holds one example, so d_r = g_j.
  Rng rng(3);
  const int trials = 10000;
  double sum = 0.0, sq = 0.0;
  for (int t = 0; t < trials; ++t) {
    for (int i = 0; i < 8; ++i) {
      ReplicaGrads rg;
      for (int r = 0; r < 8; ++r) rg.replicas.push_back(one(Tensor::vector({rng.normal()})));
      const double v = estimate_microbatch_variance(rg)[0][0];
      sum += v;
      sq += v * v;
    }
  }
  const double n = trials * 8.0;
  const double mean = sum / n;
  const double se = std::sqrt((sq / n - mean * mean) / n);
  CHECK(std::abs(mean - 0.125) <= 3.0 * se);
}

TEST_CASE("fused v2 without correction overshoots by the population variance") {
  MomentSlots s({{1}}, full_config(0.9, 0.0));
  fuse(s, {one(Tensor::vector({1.0})), one(Tensor::vector({3.0}))});
  // Mean of squares 5 against a squared mean of 4.
  CHECK(s.slot(0).v2[0] == 5.0);
  CHECK(s.slot(0).v2[0] - 4.0 == 1.0);
}

TEST_CASE("fused v2 clamps the corrected square at zero") {
  MomentSlots s({{1}}, full_config(0.9, 0.0));
  fuse(s, {one(Tensor::vector({0.1})), one(Tensor::vector({0.1}))},
       {one(Tensor::vector({5.0})), one(Tensor::vector({5.0}))});
  CHECK(s.slot(0).v2[0] == 0.0);
}

TEST_CASE("variance correction removes most of the second-moment bias") {
  // Per-example gradients N(1, 1); B = 64, M = 8 (K = 8), R = 8.
  Rng rng(4);
  const int trials = 10000;
  double corrected = 0.0, plain = 0.0;
  for (int t = 0; t < trials; ++t) {
    std::vector<ParamGrads> c, var;
    for (int i = 0; i < 8; ++i) {
      ReplicaGrads rg;
      for (int r = 0; r < 8; ++r) rg.replicas.push_back(one(Tensor::vector({rng.normal(1.0, 1.0)})));
      c.push_back(rg.mean());
      var.push_back(estimate_microbatch_variance(rg));
    }
    MomentSlots a({{1}}, full_config(0.9, 0.0));
    MomentSlots b({{1}}, full_config(0.9, 0.0));
    fuse(a, c, var);
    fuse(b, c);
    corrected += a.slot(0).v2[0];
    plain += b.slot(0).v2[0];
  }
  const double target = 1.0 + 1.0 / 64.0;
  const double bias_corrected = std::abs(corrected / trials - target);
  const double bias_plain = std::abs(plain / trials - target);
  CHECK(bias_plain > 0.1);
  CHECK(bias_corrected <= 0.3 * bias_plain);
}

TEST_CASE("factored second moment reconstructs a rank-one square exactly") {
  SlotConfig cfg;
  cfg.beta2 = 0.0;
  MomentSlots s({{2, 2}}, cfg);
  CHECK(s.slot(0).factored);
  const Tensor g = Tensor::from_rows({{1.0, std::sqrt(2.0)}, {2.0, 2.0 * std::sqrt(2.0)}});
  fuse(s, {one(g)});
  const Tensor want = Tensor::from_rows({{1, 2}, {4, 8}});
  CHECK(relative_l2_error(s.second_moment(0), want) <= 1e-12);

  MomentSlots zero({{2, 3}}, cfg);
  fuse(zero, {one(Tensor::zeros({2, 3}))});
  CHECK(zero.second_moment(0).bitwise_equal(Tensor::zeros({2, 3})));
}

TEST_CASE("factored slots keep only row and column sums") {
  MemoryLedger ledger;
  MomentSlots s({{6, 4}, {6}}, SlotConfig{}, &ledger);
  CHECK(s.element_count() == 24 + 6 + 4 + 6 + 6);
  CHECK(ledger.live(MemCategory::kSlots) == static_cast<std::int64_t>(s.element_count()));
  Rng rng(5);
  fuse(s, {ParamGrads{rng.normal_tensor({6, 4}), rng.normal_tensor({6})},
           ParamGrads{rng.normal_tensor({6, 4}), rng.normal_tensor({6})}});
  CHECK(ledger.peak() == static_cast<std::int64_t>(s.element_count()));
  for (std::size_t i = 0; i < 2; ++i) {
    const Tensor v2 = s.second_moment(i);
    for (double v : v2.span()) CHECK(v >= 0.0);
  }
}

TEST_CASE("pure decoupled decay") {
  MomentSlots s({{3}}, full_config());
  Tensor theta = Tensor::vector({1.0, -2.0, 0.5});
  const Tensor before = theta;
  fuse(s, {one(Tensor::zeros({3}))});
  adafactorw_apply({&theta}, s, 0.01, 0.1);
  for (std::size_t j = 0; j < 3; ++j) CHECK(theta[j] == before[j] * (1.0 - 0.01 * 0.1));
  CHECK(s.slot(0).v1[0] == 0.0);
}

TEST_CASE("update matches a hand-written bias-corrected step") {
  Rng rng(6);
  MomentSlots s({{5}}, full_config());
  Tensor theta = rng.normal_tensor({5});
  Tensor th = theta;
  Tensor m({5}), v({5});
  for (int step = 1; step <= 3; ++step) {
    const Tensor g = rng.normal_tensor({5});
    fuse(s, {one(g)});
    adafactorw_apply({&theta}, s, 0.05, 0.01);
    for (std::size_t j = 0; j < 5; ++j) {
      m[j] = 0.9 * m[j] + 0.1 * g[j];
      v[j] = 0.999 * v[j] + 0.001 * g[j] * g[j];
      const double mh = m[j] / (1.0 - std::pow(0.9, step));
      const double vh = v[j] / (1.0 - std::pow(0.999, step));
      th[j] = th[j] * (1.0 - 0.05 * 0.01) - 0.05 * mh / std::sqrt(vh + kAdaFactorEpsilon);
    }
  }
  CHECK(max_relative_error(theta, th) <= 1e-12);
}

TEST_CASE("bf16 first moment storage") {
  SlotConfig cfg = full_config();
  cfg.bf16_v1 = true;
  MomentSlots s({{64}}, cfg);
  MomentSlots exact({{64}}, full_config());
  Rng rng(7);
  const Tensor g = rng.normal_tensor({64});
  fuse(s, {one(g)});
  fuse(exact, {one(g)});
  const Tensor& v1 = s.slot(0).v1;
  CHECK(round_to_bf16_storage(v1).bitwise_equal(v1));
  for (std::size_t j = 0; j < 64; ++j) {
    CHECK(std::abs(v1[j] - exact.slot(0).v1[j]) <= std::ldexp(std::abs(exact.slot(0).v1[j]), -8));
  }
}

TEST_CASE("microbatched step with fused slots equals vanilla Adam on the oracle gradient") {
  using namespace bsc::microbatch;
  Rng rng(8);
  const auto f = encoders::EncoderNet::mlp(5, 8, 2, 4, encoders::Norm::kLayerNorm,
                                           encoders::InputKind::kVectors, rng);
  const auto g = encoders::EncoderNet::mlp(5, 8, 2, 4, encoders::Norm::kLayerNorm,
                                           encoders::InputKind::kVectors, rng);
  const PairBatch batch{rng.normal_tensor({16, 5}), rng.normal_tensor({16, 5})};
  const OracleResult oracle = monolithic_oracle(f, g, batch, 0.5);

  for (std::size_t m : {16, 4}) {
    MomentSlots sf = MomentSlots::for_net(f, full_config());
    MomentSlots sg = MomentSlots::for_net(g, full_config());
    microbatch_gradients(f, g, batch, BatchPlan::make(16, m, m), 0.5, [&](const MicrobatchGrad& y) {
      MomentSlots& s = y.tower == Tower::kImage ? sf : sg;
      fused_v1_update(s, y.grads, y.index, y.count);
      fused_v2_update(s, y.grads, {}, y.index, y.count);
    });
    for (std::size_t p = 0; p < f.num_params(); ++p) {
      const Tensor want = scale(oracle.grad_img[p], 0.1);
      CHECK(relative_l2_error(sf.slot(p).v1, want) <= 1e-12);
      if (m == 16) {
        Tensor sq = oracle.grad_img[p];
        for (double& v : sq.span()) v = 0.001 * (v * v);
        CHECK(relative_l2_error(sf.slot(p).v2, sq) <= 1e-12);
      }
    }
  }
}
