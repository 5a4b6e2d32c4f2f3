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

#ifndef BSC_TESTS_UNIT_HELPERS_HPP_
#define BSC_TESTS_UNIT_HELPERS_HPP_

#include <cmath>
#include <functional>

#include "bsc/numerics/tensor.hpp"

namespace bsc::testing {

// Five-point central differences of f at every entry of t; t is restored
// afterwards. Truncation error is O(h^4), so curved losses (batch statistics,
// sphere projection) do not eat the tolerance at h = 1e-5.
inline Tensor numeric_grad(Tensor& t, const std::function<double()>& f, double h = 1e-5) {
  Tensor g(t.shape());
  for (std::size_t i = 0; i < t.numel(); ++i) {
    const double keep = t[i];
    const auto at = [&](double offset) {
      t[i] = keep + offset;
      return f();
    };
    const double p2 = at(2 * h), p1 = at(h), m1 = at(-h), m2 = at(-2 * h);
    t[i] = keep;
    g[i] = (-p2 + 8.0 * p1 - 8.0 * m1 + m2) / (12.0 * h);
  }
  return g;
}

// Largest |a - b| / max(|b|, floor) over entries. The stencil's rounding
// noise is about ulp(f) / h ~ 1e-11, so exact zeros (dead ReLU paths) are held
// to 1e-10 absolute instead of being divided by their own noise.
inline double fd_error(const Tensor& analytic, const Tensor& numeric, double floor = 1e-4) {
  double worst = 0.0;
  for (std::size_t i = 0; i < analytic.numel(); ++i) {
    const double d = std::abs(analytic[i] - numeric[i]);
    worst = std::max(worst, d / std::max(std::abs(numeric[i]), floor));
  }
  return worst;
}

}  // namespace bsc::testing

#endif  // BSC_TESTS_UNIT_HELPERS_HPP_
