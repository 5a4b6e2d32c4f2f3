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

#include "bsc/shardsim/ledger.hpp"

#include <algorithm>

#include "bsc/errors.hpp"

namespace bsc {

std::string_view to_string(MemCategory c) {
  switch (c) {
    case MemCategory::kWeights: return "weights";
    case MemCategory::kSlots: return "slots";
    case MemCategory::kGathered: return "gathered";
    case MemCategory::kEmbeddings: return "embeddings";
    case MemCategory::kSimilarity: return "similarity";
    case MemCategory::kActivations: return "activations";
    case MemCategory::kGradients: return "gradients";
  }
  return "unknown";
}

bool MemoryLedger::is_working(MemCategory c) {
  return c != MemCategory::kWeights && c != MemCategory::kSlots && c != MemCategory::kGathered;
}

void MemoryLedger::allocate(MemCategory c, std::size_t elements, std::string_view op) {
  if (elements == 0) return;
  push(op, c, static_cast<std::int64_t>(elements));
}

void MemoryLedger::release(MemCategory c, std::size_t elements, std::string_view op) {
  if (elements == 0) return;
  if (live_[index(c)] < static_cast<std::int64_t>(elements)) {
    throw Error("ledger: releasing " + std::to_string(elements) + " " +
                std::string(to_string(c)) + " elements with only " +
                std::to_string(live_[index(c)]) + " live (op " + std::string(op) + ")");
  }
  push(op, c, -static_cast<std::int64_t>(elements));
}

void MemoryLedger::record_gather(std::size_t elements, std::string_view op) {
  ++gather_events_;
  gathered_elements_ += elements;
  if (record_events_) {
    events_.push_back({"gather:" + std::string(op), MemCategory::kGathered, 0, live_total_});
  }
}

void MemoryLedger::push(std::string_view op, MemCategory c, std::int64_t delta) {
  const std::size_t i = index(c);
  live_[i] += delta;
  live_total_ += delta;
  peak_[i] = std::max(peak_[i], live_[i]);
  peak_total_ = std::max(peak_total_, live_total_);
  if (is_working(c)) {
    live_working_ += delta;
    peak_working_ = std::max(peak_working_, live_working_);
  }
  if (record_events_) events_.push_back({std::string(op), c, delta, live_total_});
}

void MemoryLedger::reset_peaks() {
  peak_ = live_;
  peak_total_ = live_total_;
  peak_working_ = live_working_;
  gather_events_ = 0;
  gathered_elements_ = 0;
  events_.clear();
}

Reservation::Reservation(MemoryLedger* ledger, MemCategory c, std::size_t elements,
                         std::string_view op)
    : ledger_(ledger), category_(c), elements_(elements) {
  if (ledger_) ledger_->allocate(category_, elements_, op);
}

Reservation::Reservation(Reservation&& other) noexcept
    : ledger_(other.ledger_), category_(other.category_), elements_(other.elements_) {
  other.ledger_ = nullptr;
  other.elements_ = 0;
}

Reservation& Reservation::operator=(Reservation&& other) noexcept {
  if (this != &other) {
    release();
    ledger_ = other.ledger_;
    category_ = other.category_;
    elements_ = other.elements_;
    other.ledger_ = nullptr;
    other.elements_ = 0;
  }
  return *this;
}

void Reservation::release() {
  if (ledger_) ledger_->release(category_, elements_, "release");
  ledger_ = nullptr;
  elements_ = 0;
}

}  // namespace bsc
