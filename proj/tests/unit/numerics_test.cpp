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
#include <cstring>
#include <limits>

#include "bsc/errors.hpp"
#include "bsc/numerics/kernels.hpp"
#include "bsc/numerics/ops.hpp"
#include "bsc/numerics/rng.hpp"

using namespace bsc;

TEST_CASE("matmul hand examples") {
  const Tensor a = Tensor::from_rows({{1, 2}, {3, 4}});
  CHECK(matmul(Tensor::identity(2), a).bitwise_equal(a));
  CHECK(matmul(a, Tensor::zeros({2, 2})).bitwise_equal(Tensor::zeros({2, 2})));
  CHECK(matmul(a, Tensor::from_rows({{5, 6}, {7, 8}}))
            .bitwise_equal(Tensor::from_rows({{19, 22}, {43, 50}})));
  CHECK_THROWS_AS(matmul(a, Tensor::zeros({3, 2})), DimensionError);
}

TEST_CASE("matmul variants agree with a triple loop") {
  Rng rng(7);
  const Tensor a = rng.normal_tensor({5, 3});
  const Tensor b = rng.normal_tensor({3, 4});
  Tensor ref({5, 4});
  for (std::size_t i = 0; i < 5; ++i) {
    for (std::size_t j = 0; j < 4; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < 3; ++p) s += a.at(i, p) * b.at(p, j);
      ref.at(i, j) = s;
    }
  }
  CHECK(matmul(a, b).bitwise_equal(ref));
  CHECK(matmul_nt(a, transpose(b)).bitwise_equal(ref));
  CHECK(matmul_tn(transpose(a), b).bitwise_equal(ref));
}

TEST_CASE("parallel kernels are bitwise equal to the serial reference") {
  Rng rng(11);
  const std::size_t n = 37, k = 29, m = 41;
  const Tensor a = rng.normal_tensor({n, k});
  const Tensor b = rng.normal_tensor({k, m});
  const Tensor bt = rng.normal_tensor({m, k});
  const Tensor at = rng.normal_tensor({k, n});
  std::vector<double> s(n * m), p(n * m);

  kernels::serial::matmul(a.span(), b.span(), s, n, k, m);
  kernels::parallel::matmul(a.span(), b.span(), p, n, k, m);
  CHECK(std::memcmp(s.data(), p.data(), s.size() * sizeof(double)) == 0);

  kernels::serial::matmul_nt(a.span(), bt.span(), s, n, k, m);
  kernels::parallel::matmul_nt(a.span(), bt.span(), p, n, k, m);
  CHECK(std::memcmp(s.data(), p.data(), s.size() * sizeof(double)) == 0);

  kernels::serial::matmul_tn(at.span(), b.span(), s, k, n, m);
  kernels::parallel::matmul_tn(at.span(), b.span(), p, k, n, m);
  CHECK(std::memcmp(s.data(), p.data(), s.size() * sizeof(double)) == 0);

  const Tensor sq = rng.normal_tensor({n, m}, 0.0, 5.0);
  std::vector<double> rs(n), rp(n), cs(m), cp(m);
  kernels::serial::row_logsumexp(sq.span(), rs, n, m);
  kernels::parallel::row_logsumexp(sq.span(), rp, n, m);
  CHECK(std::memcmp(rs.data(), rp.data(), n * sizeof(double)) == 0);
  kernels::serial::col_logsumexp(sq.span(), cs, n, m);
  kernels::parallel::col_logsumexp(sq.span(), cp, n, m);
  CHECK(std::memcmp(cs.data(), cp.data(), m * sizeof(double)) == 0);

  std::vector<double> os(n * m), op(n * m), ns(n), np(n);
  kernels::serial::l2_normalize_rows(sq.span(), os, ns, n, m);
  kernels::parallel::l2_normalize_rows(sq.span(), op, np, n, m);
  CHECK(std::memcmp(os.data(), op.data(), os.size() * sizeof(double)) == 0);
}

TEST_CASE("logsumexp survives large logits") {
  const std::vector<double> a{1000.0, 1000.0, -1000.0, 0.0};
  std::vector<double> out(2);
  kernels::serial::row_logsumexp(a, out, 2, 2);
  CHECK(out[0] == doctest::Approx(1000.0 + std::log(2.0)).epsilon(1e-15));
  CHECK(out[1] == doctest::Approx(0.0).epsilon(1e-15));
}

TEST_CASE("l2_normalize_rows") {
  CHECK(l2_normalize_rows(Tensor::from_rows({{1, 0}})).bitwise_equal(Tensor::from_rows({{1, 0}})));
  const Tensor t = l2_normalize_rows(Tensor::from_rows({{3, 4}}));
  CHECK(t[0] == doctest::Approx(0.6).epsilon(1e-15));
  CHECK(t[1] == doctest::Approx(0.8).epsilon(1e-15));
  CHECK_THROWS_AS(l2_normalize_rows(Tensor::from_rows({{0, 0}})), DegenerateEmbeddingError);
  CHECK_THROWS_AS(l2_normalize_rows(Tensor::from_rows({{1e-31, 0}})), DegenerateEmbeddingError);

  Rng rng(3);
  const Tensor r = l2_normalize_rows(rng.normal_tensor({50, 7}));
  for (std::size_t i = 0; i < 50; ++i) {
    double s = 0.0;
    for (double v : r.row(i)) s += v * v;
    CHECK(std::abs(std::sqrt(s) - 1.0) <= 1e-12);
  }
}

TEST_CASE("bf16 storage emulation") {
  CHECK(round_to_bf16(1.0) == 1.0);
  CHECK(round_to_bf16(0.0) == 0.0);
  // 1 + 2^-8 is halfway between 1 and 1 + 2^-7; ties go to the even significand.
  const double tie = 1.0 + std::ldexp(1.0, -8);
  CHECK(round_to_bf16(tie) == 1.0);
  CHECK(round_to_bf16(1.0 + 3 * std::ldexp(1.0, -8)) == 1.0 + std::ldexp(1.0, -6));
  CHECK(round_to_bf16(-tie) == -1.0);

  Rng rng(5);
  for (int i = 0; i < 10000; ++i) {
    const double x = rng.normal() * std::pow(10.0, rng.uniform(-20, 20));
    const double r = round_to_bf16(x);
    CHECK(std::abs(r - x) <= std::ldexp(std::abs(x), -8));
    CHECK(round_to_bf16(r) == r);
  }
}

TEST_CASE("rng determinism and splitting") {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
  const Rng root(9);
  Rng s1 = root.split(1), s1b = root.split(1), s2 = root.split(2);
  CHECK(s1.next_u64() == s1b.next_u64());
  CHECK(s1.next_u64() != s2.next_u64());
  Rng u(1);
  for (int i = 0; i < 1000; ++i) {
    const double v = u.uniform();
    CHECK(v >= 0.0);
    CHECK(v < 1.0);
    CHECK(u.below(7) < 7);
  }
  Rng n(2);
  const Tensor t = n.normal_tensor({20000});
  double mean = 0.0, sq = 0.0;
  for (double v : t.span()) mean += v;
  mean /= 20000.0;
  for (double v : t.span()) sq += (v - mean) * (v - mean);
  CHECK(std::abs(mean) < 0.03);
  CHECK(std::abs(sq / 19999.0 - 1.0) < 0.05);
}

TEST_CASE("tensor basics") {
  CHECK_THROWS_AS(Tensor({2, 2}, {1, 2, 3}), DimensionError);
  Tensor t = Tensor::from_rows({{1, 2}, {3, 4}, {5, 6}});
  CHECK(t.slice_rows(1, 3).bitwise_equal(Tensor::from_rows({{3, 4}, {5, 6}})));
  t.assign_rows(0, Tensor::from_rows({{9, 9}}));
  CHECK(t.at(0, 1) == 9.0);
  Tensor bad = t;
  bad[0] = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(require_finite(bad, "t"), NumericError);
  CHECK(relative_l2_error(t, t) == 0.0);
}
