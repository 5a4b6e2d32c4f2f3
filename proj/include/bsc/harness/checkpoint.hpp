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

#ifndef BSC_HARNESS_CHECKPOINT_HPP_
#define BSC_HARNESS_CHECKPOINT_HPP_

#include <cstdint>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "bsc/numerics/tensor.hpp"

namespace bsc::harness {

// Little-endian tensor file; byte layout in docs/checkpoint_format.md.
inline constexpr char kCheckpointMagic[4] = {'B', 'S', 'C', '1'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

void write_tensors(std::ostream& out, const NamedTensors& tensors);
NamedTensors read_tensors(std::istream& in);

void save_tensors(const std::string& path, const NamedTensors& tensors);
NamedTensors load_tensors(const std::string& path);

// Looks a tensor up by name; throws FormatError when missing.
const Tensor& find_tensor(const NamedTensors& tensors, const std::string& name);

}  // namespace bsc::harness

#endif  // BSC_HARNESS_CHECKPOINT_HPP_
