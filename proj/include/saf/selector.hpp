/*
Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    https://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
*/
#pragma once

#include <cstddef>
#include <cstdint>
#include <deque>
#include <span>
#include <vector>

#include "saf/common.hpp"

namespace saf {

enum class SelectorStrategy { Windowing, Random };

struct SelectorConfig {
    SelectorStrategy strategy = SelectorStrategy::Windowing;
    double budget_fraction = 0.10;
    std::size_t window_len = 60;
    double percentile = 0.10;
    std::size_t pacing_slack = 4;

    void validate() const;
};

enum class SelectDecision { Select, Skip };

struct SelectionSummary {
    std::vector<std::uint64_t> selected_ids;
    std::size_t consumed = 0;
    std::size_t allocated = 0;
};

/// ceil(budget_fraction * items_per_interval), computed so that 0.1 * 240
/// yields 24 and not 25.
std::size_t allocated_budget(double budget_fraction, std::size_t items_per_interval);

/// Irrevocable per-interval selection of low-confidence items under a
/// budget.
///
/// Windowing admits an item when the budget is not exhausted, the linear
/// pacing allowance ceil(allocated * items_seen / items_per_interval) +
/// pacing_slack exceeds consumed (items_seen counts the current item), and
/// its confidence is <= the nearest-rank percentile of the confidences
/// buffered before it. An empty buffer admits confidences <= 0.5.
///
/// Random admits an item when the budget is not exhausted and a seeded
/// uniform draw falls below budget_fraction.
class OnlineSelector {
  public:
    OnlineSelector(SelectorConfig config, std::size_t items_per_interval, std::uint64_t seed);

    SelectDecision offer(std::uint64_t item_id, double confidence);

    /// Closes the interval and returns its record; the window, the item
    /// counter and the consumed budget all start over.
    SelectionSummary end_interval();

    std::size_t allocated() const { return allocated_; }
    std::size_t consumed() const { return selected_.size(); }
    std::size_t items_seen() const { return items_seen_; }
    std::size_t window_size() const { return window_.size(); }
    const SelectorConfig& config() const { return config_; }

    /// Threshold the next windowing offer would be compared against.
    double current_threshold() const;

  private:
    SelectorConfig config_;
    std::size_t items_per_interval_;
    std::size_t allocated_;
    std::size_t items_seen_ = 0;
    std::deque<double> window_;
    std::vector<std::uint64_t> selected_;
    Rng rng_;
};

/// |selected ∩ bottom| / allocated, where bottom holds the `allocated`
/// lowest-confidence ids of the interval (ties to the lower id).
double selection_success_rate(std::span<const std::uint64_t> selected_ids, std::span<const std::uint64_t> ids,
                              std::span<const double> confidences, std::size_t allocated);

}  // namespace saf
