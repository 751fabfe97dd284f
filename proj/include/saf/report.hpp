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
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "saf/scenario.hpp"

namespace saf {

using Json = nlohmann::json;

/// Inputs of the base-model training run. Dataset, initialization, shuffle
/// and held-out seeds are all derived from `seed`.
struct TrainSettings {
    std::uint64_t seed = 1;
    std::size_t n_per_class = 500;
    std::size_t epochs = 30;
    std::size_t batch_size = 32;
    double lr = 0.05;
    std::size_t heldout_size = 2000;
};

struct TrainReport {
    double train_error = 0.0;
    double heldout_error = 0.0;
    ParamCounts counts;
    double norm_affine_fraction = 0.0;
};

struct TrainOutcome {
    ModelParams model;
    TrainReport report;
};

TrainOutcome train_base_model(const TrainSettings& settings, const CorruptionParams& corruption = {});

/// Every tunable of a run. The scenario schedule comes from `scenario_ref`
/// ("1", "2" or the path of a scenario file); the remaining fields
/// override the knobs of that schedule.
struct RunConfig {
    std::string scenario_ref = "2";
    std::uint64_t seed = 7;
    std::size_t n_reps = 100;
    std::vector<Arm> arms{Arm::Offline, Arm::TtaOnly, Arm::TtaSaf};
    SelectorConfig selector;
    AdapterConfig adapter;
    ControllerConfig controller;
    CorruptionParams corruption;
    double shift_probability = 1.0;
    OracleMode oracle = OracleMode::Provenance;
    bool confirm_finetune = false;
    TrainSettings train;
    bool dump_ledger = false;
    bool dump_stream = false;

    void validate() const;
};

/// Loads the schedule named by `ref` and applies the knobs of `config`.
ScenarioSpec build_scenario(const RunConfig& config);

/// Scenario file: {"name": str, "items_per_interval": int,
/// "schedule": ["none", "fog:5", ...]}.
ScenarioSpec load_scenario_file(const std::filesystem::path& path);

/// Flat object with every key of RunConfig resolved. Worker count and
/// output paths are not part of it, so summaries do not depend on them.
Json config_to_json(const RunConfig& config);

/// Applies the keys present in `j`. Unknown keys and out-of-range values
/// throw.
void apply_config_json(RunConfig& config, const Json& j);

Json read_json_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, const std::string& text);

std::string to_string(SelectorStrategy s);
SelectorStrategy parse_selector(std::string_view text);
std::string to_string(OracleMode m);
OracleMode parse_oracle(std::string_view text);
std::vector<Arm> parse_arm_list(std::string_view text);

/// TtaSaf error in the first and second interval of each run of identical
/// consecutive shifted schedule entries.
struct PhaseExposure {
    ShiftSpec shift;
    int first_interval = 0;
    double first_error = 0.0;
    double second_error = 0.0;
};

std::vector<PhaseExposure> phase_exposure(const AggregateReport& report, const ScenarioSpec& spec);

std::string interval_csv(const AggregateReport& report);
std::string selection_csv(const std::vector<double>& windowing, const std::vector<double>& random);

Json train_report_json(const TrainReport& report, const TrainSettings& settings);
Json summary_json(const AggregateReport& report, const ScenarioSpec& spec, const RunConfig& config);

/// Files rendered from one summary: an error series (interval plus one
/// column per arm), a selection series when present, and a text table.
struct RenderedReport {
    std::string error_series;
    std::optional<std::string> selection_series;
    std::string table;
};

/// Throws Error naming the offending key when the summary is malformed.
RenderedReport render_summary(const Json& summary);

}  // namespace saf
