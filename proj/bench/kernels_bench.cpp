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

// Serial reference kernels against their OpenMP counterparts.
#include <benchmark/benchmark.h>

#include <vector>

#include "bsc/numerics/kernels.hpp"
#include "bsc/numerics/rng.hpp"

namespace {

std::vector<double> random_values(std::size_t n, std::uint64_t seed) {
  bsc::Rng rng(seed);
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform(-1.0, 1.0);
  return v;
}

template <bool Parallel>
void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = random_values(n * n, 1);
  const auto b = random_values(n * n, 2);
  std::vector<double> c(n * n);
  for (auto _ : state) {
    if constexpr (Parallel) {
      bsc::kernels::parallel::matmul(a, b, c, n, n, n);
    } else {
      bsc::kernels::serial::matmul(a, b, c, n, n, n);
    }
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n * n * n));
}

template <bool Parallel>
void BM_MatmulNT(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = random_values(n * n, 3);
  const auto b = random_values(n * n, 4);
  std::vector<double> c(n * n);
  for (auto _ : state) {
    if constexpr (Parallel) {
      bsc::kernels::parallel::matmul_nt(a, b, c, n, n, n);
    } else {
      bsc::kernels::serial::matmul_nt(a, b, c, n, n, n);
    }
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n * n * n));
}

template <bool Parallel>
void BM_RowLogSumExp(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = random_values(n * n, 5);
  std::vector<double> out(n);
  for (auto _ : state) {
    if constexpr (Parallel) {
      bsc::kernels::parallel::row_logsumexp(a, out, n, n);
    } else {
      bsc::kernels::serial::row_logsumexp(a, out, n, n);
    }
    benchmark::DoNotOptimize(out.data());
  }
}

template <bool Parallel>
void BM_ColLogSumExp(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = random_values(n * n, 6);
  std::vector<double> out(n);
  for (auto _ : state) {
    if constexpr (Parallel) {
      bsc::kernels::parallel::col_logsumexp(a, out, n, n);
    } else {
      bsc::kernels::serial::col_logsumexp(a, out, n, n);
    }
    benchmark::DoNotOptimize(out.data());
  }
}

}  // namespace

BENCHMARK(BM_Matmul<false>)->Arg(64)->Arg(256)->Arg(512);
BENCHMARK(BM_Matmul<true>)->Arg(64)->Arg(256)->Arg(512);
BENCHMARK(BM_MatmulNT<false>)->Arg(256)->Arg(512);
BENCHMARK(BM_MatmulNT<true>)->Arg(256)->Arg(512);
BENCHMARK(BM_RowLogSumExp<false>)->Arg(1024)->Arg(4096);
BENCHMARK(BM_RowLogSumExp<true>)->Arg(1024)->Arg(4096);
BENCHMARK(BM_ColLogSumExp<false>)->Arg(1024)->Arg(4096);
BENCHMARK(BM_ColLogSumExp<true>)->Arg(1024)->Arg(4096);

BENCHMARK_MAIN();
