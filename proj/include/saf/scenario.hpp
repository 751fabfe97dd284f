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
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "saf/controller.hpp"
#include "saf/ledger.hpp"
#include "saf/model.hpp"
#include "saf/oracle.hpp"
#include "saf/selector.hpp"
#include "saf/shift_forge.hpp"
#include "saf/tta.hpp"

namespace saf {

struct ScenarioSpec {
    std::string name;
    StreamConfig stream;
    SelectorConfig selector;
    AdapterConfig adapter;
    ControllerConfig controller;
    OracleMode oracle_mode = OracleMode::Provenance;
    /// Manual trigger mode acts on a FineTune decision only when set.
    bool confirm_finetune = false;

    std::size_t total_items() const { return stream.intervals * stream.items_per_interval; }
    std::size_t allocated_per_interval() const {
        return allocated_budget(selector.budget_fraction, stream.items_per_interval);
    }
    /// 1-based indices of intervals whose schedule entry is not (none,0).
    std::vector<int> shifted_intervals() const;

    void validate() const;
};

/// Seven clean intervals of 240 items.
ScenarioSpec scenario_1();

/// A clean interval followed by fog, snow and frost at severity 5, each
/// lasting two consecutive intervals.
ScenarioSpec scenario_2();

enum class Arm { Offline, TtaOnly, TtaSaf };

std::string_view to_string(Arm arm);
Arm parse_arm(std::string_view text);

inline constexpr std::size_t kCleanReserveSize = 1000;
inline constexpr std::uint64_t kExemplarBankSeed = 0xBA4C;

/// Read-only inputs shared by every arm and replication.
struct RunResources {
    ModelParams base_model;
    LabeledSet clean_reserve;
    std::optional<ExemplarIndex> exemplars;
};

/// Clean reserve drawn from `seed`; the exemplar index is built only when
/// the scenario's oracle needs it.
RunResources make_resources(ModelParams base_model, const ScenarioSpec& spec, std::uint64_t seed);

struct FineTuneEvent {
    int interval = 0;
    ShiftKind culprit = ShiftKind::None;
    std::size_t culprit_samples = 0;
    double post_culprit_train_loss = 0.0;
};

struct DecisionLogEntry {
    int interval = 0;
    std::optional<double> proxy_rate;
    std::size_t validated = 0;
    std::string decision;  // keep | finetune | finetune-unconfirmed
    ShiftKind culprit = ShiftKind::None;
    std::size_t finetune_samples = 0;
};

struct IntervalSelection {
    SelectionSummary summary;
    double success_rate = 0.0;
    std::size_t ledger_records = 0;
    std::size_t budget_consumed = 0;
};

struct ArmResult {
    Arm arm = Arm::Offline;
    std::vector<double> interval_error;  // index k is interval k+1
    std::vector<FineTuneEvent> finetunes;
    std::vector<IntervalSelection> selections;
    std::vector<DecisionLogEntry> decisions;
    CurationLedger ledger;
    /// Per-item predictions in stream order (all arms).
    std::vector<int> predictions;
};

/// Runs one arm over `stream`. Offline predicts with the frozen base model
/// and running statistics; TtaOnly adapts online; TtaSaf adds budgeted
/// selection, expert validation, the ledger and threshold-triggered
/// fine-tuning at interval boundaries.
ArmResult run_arm(const ScenarioSpec& spec, Arm arm, const std::vector<StreamItem>& stream,
                  const RunResources& resources, std::uint64_t seed);

/// Generates the stream from `seed` and runs the arm on it.
ArmResult run_arm(const ScenarioSpec& spec, Arm arm, const RunResources& resources, std::uint64_t seed);

/// Seed of replication r.
std::uint64_t replication_seed(std::uint64_t base_seed, std::size_t replication);
std::uint64_t stream_seed(std::uint64_t replication_seed);

struct ReplicateOptions {
    std::size_t workers = 1;
    /// Also run the TtaSaf pipeline with the other selector strategy on the
    /// same stream so both success rates are reported.
    bool compare_selection = true;
    std::optional<std::filesystem::path> dump_dir;
    bool dump_ledger = false;
    bool dump_stream = false;
};

struct ArmAggregate {
    Arm arm = Arm::Offline;
    std::vector<double> mean_error;
    std::vector<double> std_error;
    double shifted_mean = 0.0;
    std::size_t finetune_events = 0;
};

struct AggregateReport {
    std::string scenario;
    std::size_t n_reps = 0;
    std::uint64_t base_seed = 0;
    std::size_t intervals = 0;
    std::vector<int> shifted_intervals;
    std::vector<ArmAggregate> arms;
    std::optional<std::vector<double>> windowing_success;
    std::optional<std::vector<double>> random_success;
    std::size_t finetune_events_total = 0;
    std::vector<std::size_t> finetune_events_per_rep;
    std::size_t max_budget_consumed = 0;
    std::size_t budget_allocated = 0;
    std::size_t budget_violations = 0;
    std::optional<double> offline_over_saf;
    std::optional<double> tta_over_saf;

    const ArmAggregate* find(Arm arm) const;
};

AggregateReport replicate(const ScenarioSpec& spec, const std::vector<Arm>& arms, std::size_t n_reps,
                          std::uint64_t base_seed, const RunResources& resources, const ReplicateOptions& options);

struct SelectionComparison {
    std::vector<double> windowing_success;
    std::vector<double> random_success;
};

SelectionComparison compare_selection(const ScenarioSpec& spec, std::size_t n_reps, std::uint64_t base_seed,
                                      const RunResources& resources, std::size_t workers);

}  // namespace saf
