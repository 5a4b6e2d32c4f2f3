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

#include "bsc/contrastive/contrastive.hpp"
#include "bsc/errors.hpp"
#include "bsc/numerics/ops.hpp"
#include "bsc/numerics/rng.hpp"
#include "helpers.hpp"

using namespace bsc;
using namespace bsc::contrastive;
using bsc::testing::fd_error;
using bsc::testing::numeric_grad;

namespace {

SimilarityMatrix raw(Tensor a, double tau = 1.0) { return SimilarityMatrix{std::move(a), tau}; }

// Direct transcription of the loss: row and column softmax cross-entropies
// with the diagonal as the target, no shifting.
double loop_loss(const Tensor& a) {
  const std::size_t b = a.rows();
  double row = 0.0, col = 0.0;
  for (std::size_t i = 0; i < b; ++i) {
    double rs = 0.0, cs = 0.0;
    for (std::size_t k = 0; k < b; ++k) {
      rs += std::exp(a.at(i, k));
      cs += std::exp(a.at(k, i));
    }
    row -= std::log(std::exp(a.at(i, i)) / rs);
    col -= std::log(std::exp(a.at(i, i)) / cs);
  }
  return 0.5 * (row + col) / static_cast<double>(b);
}

}  // namespace

TEST_CASE("similarity") {
  const Tensor eye = Tensor::identity(3);
  CHECK(similarity(eye, eye, 1.0).a.bitwise_equal(eye));

  Rng rng(1);
  const Tensor x = l2_normalize_rows(rng.normal_tensor({3, 2}));
  const Tensor y = l2_normalize_rows(rng.normal_tensor({3, 2}));
  const SimilarityMatrix s1 = similarity(x, y, 1.0);
  const SimilarityMatrix s2 = similarity(x, y, 0.5);
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 3; ++j) {
      const double ref = x.at(i, 0) * y.at(j, 0) + x.at(i, 1) * y.at(j, 1);
      CHECK(s1.a.at(i, j) == ref);
      CHECK(s2.a.at(i, j) == 2.0 * s1.a.at(i, j));
      CHECK(std::abs(s2.a.at(i, j)) <= 2.0);
    }
  }
  CHECK_THROWS_AS(similarity(x, y, 0.0), ConfigError);
  CHECK_THROWS_AS(similarity(x, y, -1.0), ConfigError);
  CHECK_THROWS_AS(similarity(x, rng.normal_tensor({4, 2}), 1.0), DimensionError);
}

TEST_CASE("loss values") {
  CHECK(contrastive_loss(raw(Tensor::from_rows({{3.7}}))) == 0.0);
  for (std::size_t b : {2, 4, 16}) {
    CHECK(std::abs(contrastive_loss(raw(Tensor::filled({b, b}, 0.3))) - std::log(double(b))) <=
          1e-12);
  }
  const double expect = -std::log(std::exp(2.0) / (std::exp(2.0) + 1.0));
  CHECK(contrastive_loss(raw(Tensor::from_rows({{2, 0}, {0, 2}}))) ==
        doctest::Approx(expect).epsilon(1e-14));
  CHECK(expect == doctest::Approx(0.126928).epsilon(1e-6));

  Rng rng(2);
  for (int t = 0; t < 20; ++t) {
    const Tensor a = rng.normal_tensor({5, 5}, 0.0, 3.0);
    CHECK(contrastive_loss(raw(a)) == doctest::Approx(loop_loss(a)).epsilon(1e-12));
  }
  // Logits at +-1/tau with tau = 0.001 would overflow an unshifted exp.
  const double big = contrastive_loss(raw(Tensor::from_rows({{1000, -1000}, {-1000, 1000}})));
  CHECK(std::isfinite(big));
  CHECK(big >= 0.0);
}

TEST_CASE("swapping X and Y leaves the loss unchanged") {
  Rng rng(3);
  const Tensor x = l2_normalize_rows(rng.normal_tensor({6, 3}));
  const Tensor y = l2_normalize_rows(rng.normal_tensor({6, 3}));
  CHECK(contrastive_loss(similarity(x, y, 0.2)) ==
        doctest::Approx(contrastive_loss(similarity(y, x, 0.2))).epsilon(1e-14));
}

TEST_CASE("aligned embeddings beat the uniform loss") {
  const Tensor e = Tensor::identity(4);
  CHECK(contrastive_loss(similarity(e, e, 0.1)) < std::log(4.0));
}

TEST_CASE("gradient with respect to A") {
  const Tensor d = loss_grad_wrt_A(raw(Tensor::filled({2, 2}, 1.0)));
  CHECK(d.at(0, 0) == doctest::Approx(-0.25).epsilon(1e-15));
  CHECK(d.at(0, 1) == doctest::Approx(0.25).epsilon(1e-15));
  CHECK(d.at(1, 0) == doctest::Approx(0.25).epsilon(1e-15));
  CHECK(d.at(1, 1) == doctest::Approx(-0.25).epsilon(1e-15));

  Rng rng(4);
  Tensor a = rng.normal_tensor({3, 3});
  const Tensor g = loss_grad_wrt_A(raw(a));
  const Tensor num = numeric_grad(a, [&] { return contrastive_loss(raw(a)); });
  CHECK(fd_error(g, num) <= 1e-7);

  // Loop reference built from the two terms separately: the row term's rows
  // and the column term's columns each sum to zero.
  const Tensor big = rng.normal_tensor({7, 7}, 0.0, 4.0);
  const Tensor gb = loss_grad_wrt_A(raw(big));
  const double w = 1.0 / 14.0;
  Tensor row_term({7, 7}), col_term({7, 7});
  for (std::size_t i = 0; i < 7; ++i) {
    double rs = 0.0, cs = 0.0;
    for (std::size_t k = 0; k < 7; ++k) {
      rs += std::exp(big.at(i, k));
      cs += std::exp(big.at(k, i));
    }
    for (std::size_t k = 0; k < 7; ++k) {
      row_term.at(i, k) = w * (std::exp(big.at(i, k)) / rs - (i == k ? 1.0 : 0.0));
      col_term.at(k, i) = w * (std::exp(big.at(k, i)) / cs - (i == k ? 1.0 : 0.0));
    }
  }
  double total = 0.0;
  for (std::size_t i = 0; i < 7; ++i) {
    double r = 0.0, c = 0.0;
    for (std::size_t k = 0; k < 7; ++k) {
      r += row_term.at(i, k);
      c += col_term.at(k, i);
      total += gb.at(i, k);
      CHECK(gb.at(i, k) == doctest::Approx(row_term.at(i, k) + col_term.at(i, k)).epsilon(1e-12));
    }
    CHECK(std::abs(r) <= 1e-15);
    CHECK(std::abs(c) <= 1e-15);
  }
  CHECK(std::abs(total) <= 1e-14);
}

TEST_CASE("gradient with respect to the embeddings") {
  Rng rng(5);
  const Tensor x0 = rng.normal_tensor({2, 2});
  const Tensor y0 = rng.normal_tensor({2, 2});
  const SimilarityMatrix s0 = similarity(x0, y0, 0.7);
  const Tensor zero = Tensor::zeros({2, 2});
  const EmbeddingGrads z = grad_to_embeddings(s0, x0, y0, zero);
  CHECK(z.dx.bitwise_equal(zero));
  CHECK(z.dy.bitwise_equal(zero));

  // Index-summation reference, scaled by 1/tau after the sum.
  const Tensor da = rng.normal_tensor({2, 2});
  const EmbeddingGrads e = grad_to_embeddings(s0, x0, y0, da);
  for (std::size_t i = 0; i < 2; ++i) {
    for (std::size_t j = 0; j < 2; ++j) {
      double sx = 0.0, sy = 0.0;
      for (std::size_t k = 0; k < 2; ++k) {
        sx += da.at(i, k) * y0.at(k, j);
        sy += da.at(k, i) * x0.at(k, j);
      }
      CHECK(e.dx.at(i, j) == sx * (1.0 / 0.7));
      CHECK(e.dy.at(i, j) == sy * (1.0 / 0.7));
    }
  }

  for (double tau : {1.0, 0.5}) {
    for (std::size_t b : {2, 3, 4}) {
      Tensor x = rng.normal_tensor({b, 3});
      Tensor y = rng.normal_tensor({b, 3});
      const auto loss = [&] { return contrastive_loss(similarity(x, y, tau)); };
      const SimilarityMatrix s = similarity(x, y, tau);
      const EmbeddingGrads g = grad_to_embeddings(s, x, y, loss_grad_wrt_A(s));
      CHECK(fd_error(g.dx, numeric_grad(x, loss)) <= 1e-6);
      CHECK(fd_error(g.dy, numeric_grad(y, loss)) <= 1e-6);
    }
  }
  CHECK_THROWS_AS(grad_to_embeddings(s0, x0, y0, Tensor::zeros({3, 3})), DimensionError);
}
