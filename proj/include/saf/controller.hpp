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
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "saf/ledger.hpp"
#include "saf/model.hpp"
#include "saf/tta.hpp"

namespace saf {

enum class TriggerMode { Automatic, Manual };

struct ControllerConfig {
    double theta = 0.2;
    TriggerMode trigger_mode = TriggerMode::Automatic;
    std::size_t finetune_epochs = 20;
    double finetune_lr = 0.01;
    std::size_t finetune_batch = 8;
    double mix_clean_fraction = 0.5;

    void validate() const;
};

struct Decision {
    enum class Action { Keep, FineTune };

    Action action = Action::Keep;
    std::optional<CulpritReport> culprit;
    /// Proxy rate of the interval; empty when nothing was validated.
    std::optional<ProxyRate> proxy;
    /// Why the controller kept the model (empty for FineTune).
    std::string reason;

    bool fine_tune() const { return action == Action::FineTune; }
};

/// Keep when the interval's mismatch rate is <= theta, when nothing was
/// validated, or when no tagged culprit exists since `since_interval`;
/// otherwise FineTune on the culprit group.
Decision end_of_interval(const CurationLedger& ledger, int interval, int since_interval,
                         const ControllerConfig& config);

struct RelabeledSample {
    Image image;
    int label = 0;
};

using RelabeledStore = std::map<std::uint64_t, RelabeledSample>;

struct FineTuneResult {
    ModelParams model;
    std::vector<std::uint64_t> culprit_ids;
    std::vector<std::size_t> clean_rows;  // rows of the clean reserve drawn at any point
    double final_loss = 0.0;
};

/// Full-parameter cross-entropy SGD on the culprit's relabeled samples,
/// each batch topped up with mix_clean_fraction clean-reserve samples.
/// Running statistics are then recomputed over the culprit samples plus a
/// clean draw in the same proportion.
FineTuneResult fine_tune(const ModelParams& model, const CulpritReport& culprit, const RelabeledStore& store,
                         const LabeledSet& clean_reserve, const ControllerConfig& config, std::uint64_t seed);

/// Swaps the adapter onto `model`.
void deploy(const ModelParams& model, TtaAdapter& adapter);

}  // namespace saf
