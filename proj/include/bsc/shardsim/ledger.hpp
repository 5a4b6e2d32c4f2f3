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

#ifndef BSC_SHARDSIM_LEDGER_HPP_
#define BSC_SHARDSIM_LEDGER_HPP_

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "bsc/numerics/tensor.hpp"

namespace bsc {

enum class MemCategory : std::uint8_t {
  kWeights,
  kSlots,
  kGathered,
  kEmbeddings,
  kSimilarity,
  kActivations,
  kGradients,
};
inline constexpr std::size_t kNumMemCategories = 7;

std::string_view to_string(MemCategory c);

struct LedgerEvent {
  std::string op;
  MemCategory category;
  std::int64_t delta;       // elements; negative on release
  std::int64_t live_after;  // total live elements after the event
};

// Timeline of live element counts. Counts elements, not bytes: every tracked
// buffer holds 64-bit reals. Single-threaded by contract.
class MemoryLedger {
 public:
  explicit MemoryLedger(bool record_events = false) : record_events_(record_events) {}

  void allocate(MemCategory c, std::size_t elements, std::string_view op);
  // Throws if it would drive a category below zero.
  void release(MemCategory c, std::size_t elements, std::string_view op);
  // Communication accounting: one gather of `elements` received elements.
  void record_gather(std::size_t elements, std::string_view op);

  std::int64_t live() const { return live_total_; }
  std::int64_t live(MemCategory c) const { return live_[index(c)]; }
  std::int64_t peak() const { return peak_total_; }
  std::int64_t peak(MemCategory c) const { return peak_[index(c)]; }
  // Peak of the sum of the listed categories, tracked since construction.
  std::int64_t working_peak() const { return peak_working_; }

  std::size_t gather_events() const { return gather_events_; }
  std::size_t gathered_elements() const { return gathered_elements_; }
  const std::vector<LedgerEvent>& events() const { return events_; }

  // Starts a new measurement window: peaks collapse to current live counts.
  void reset_peaks();

  // Categories that make up the per-step working set (everything except
  // parameter residency: weights, slots, gathered weights).
  static bool is_working(MemCategory c);

 private:
  static std::size_t index(MemCategory c) { return static_cast<std::size_t>(c); }
  void push(std::string_view op, MemCategory c, std::int64_t delta);

  bool record_events_;
  std::array<std::int64_t, kNumMemCategories> live_{};
  std::array<std::int64_t, kNumMemCategories> peak_{};
  std::int64_t live_total_ = 0;
  std::int64_t peak_total_ = 0;
  std::int64_t live_working_ = 0;
  std::int64_t peak_working_ = 0;
  std::size_t gather_events_ = 0;
  std::size_t gathered_elements_ = 0;
  std::vector<LedgerEvent> events_;
};

// Move-only handle that keeps `elements` allocated in a ledger until it is
// destroyed or released. A null ledger makes it a no-op.
class Reservation {
 public:
  Reservation() = default;
  Reservation(MemoryLedger* ledger, MemCategory c, std::size_t elements, std::string_view op);
  Reservation(Reservation&& other) noexcept;
  Reservation& operator=(Reservation&& other) noexcept;
  Reservation(const Reservation&) = delete;
  Reservation& operator=(const Reservation&) = delete;
  ~Reservation() { release(); }

  void release();
  std::size_t elements() const { return elements_; }

 private:
  MemoryLedger* ledger_ = nullptr;
  MemCategory category_ = MemCategory::kActivations;
  std::size_t elements_ = 0;
};

// A tensor whose storage is charged to a ledger for as long as it lives.
struct TrackedTensor {
  TrackedTensor() = default;
  TrackedTensor(Tensor t, MemoryLedger* ledger, MemCategory c, std::string_view op)
      : value(std::move(t)), hold(ledger, c, value.numel(), op) {}

  Tensor value;
  Reservation hold;
};

}  // namespace bsc

#endif  // BSC_SHARDSIM_LEDGER_HPP_
