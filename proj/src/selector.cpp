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
#include "saf/selector.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace saf {

void SelectorConfig::validate() const {
    if (!(budget_fraction > 0.0 && budget_fraction <= 1.0)) {
        throw Error("budget_fraction must be in (0,1]");
    }
    if (window_len < 2) {
        throw Error("window_len must be >= 2");
    }
    if (!(percentile > 0.0 && percentile < 1.0)) {
        throw Error("percentile must be in (0,1)");
    }
}

std::size_t allocated_budget(double budget_fraction, std::size_t items_per_interval) {
    const double raw = budget_fraction * static_cast<double>(items_per_interval);
    // Absorb representation error: 0.1 * 240 is 24.000000000000004.
    return static_cast<std::size_t>(std::ceil(raw - 1e-9));
}

OnlineSelector::OnlineSelector(SelectorConfig config, std::size_t items_per_interval, std::uint64_t seed)
    : config_(config), items_per_interval_(items_per_interval), rng_(seed) {
    config_.validate();
    if (items_per_interval == 0) {
        throw Error("items_per_interval must be >= 1");
    }
    allocated_ = allocated_budget(config_.budget_fraction, items_per_interval_);
}

double OnlineSelector::current_threshold() const {
    if (window_.empty()) {
        return 0.5;
    }
    std::vector<double> sorted(window_.begin(), window_.end());
    std::sort(sorted.begin(), sorted.end());
    const auto rank = static_cast<std::size_t>(std::ceil(config_.percentile * static_cast<double>(sorted.size())));
    return sorted[std::max<std::size_t>(rank, 1) - 1];
}

SelectDecision OnlineSelector::offer(std::uint64_t item_id, double confidence) {
    if (items_seen_ >= items_per_interval_) {
        throw Error("interval closed");
    }
    ++items_seen_;

    bool take = false;
    const bool budget_left = selected_.size() < allocated_;
    if (config_.strategy == SelectorStrategy::Random) {
        const double draw = uniform01(rng_);
        take = budget_left && draw < config_.budget_fraction;
    } else {
        const auto paced = static_cast<std::size_t>(std::ceil(static_cast<double>(allocated_ * items_seen_) /
                                                              static_cast<double>(items_per_interval_))) +
                           config_.pacing_slack;
        take = budget_left && selected_.size() < paced && confidence <= current_threshold();
        window_.push_back(confidence);
        if (window_.size() > config_.window_len) {
            window_.pop_front();
        }
    }
    if (take) {
        selected_.push_back(item_id);
        return SelectDecision::Select;
    }
    return SelectDecision::Skip;
}

SelectionSummary OnlineSelector::end_interval() {
    SelectionSummary s;
    s.consumed = selected_.size();
    s.allocated = allocated_;
    s.selected_ids = std::move(selected_);
    selected_.clear();
    window_.clear();
    items_seen_ = 0;
    return s;
}

double selection_success_rate(std::span<const std::uint64_t> selected_ids, std::span<const std::uint64_t> ids,
                              std::span<const double> confidences, std::size_t allocated) {
    if (allocated == 0) {
        throw Error("allocated budget is zero");
    }
    if (ids.size() != confidences.size()) {
        throw Error("ids and confidences differ in length");
    }
    std::vector<std::size_t> order(ids.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (confidences[a] != confidences[b]) return confidences[a] < confidences[b];
        return ids[a] < ids[b];
    });
    std::vector<std::uint64_t> bottom;
    for (std::size_t i = 0; i < std::min(allocated, order.size()); ++i) {
        bottom.push_back(ids[order[i]]);
    }
    std::sort(bottom.begin(), bottom.end());
    std::size_t hits = 0;
    for (std::uint64_t id : selected_ids) {
        if (std::binary_search(bottom.begin(), bottom.end(), id)) {
            ++hits;
        }
    }
    return static_cast<double>(hits) / static_cast<double>(allocated);
}

}  // namespace saf
