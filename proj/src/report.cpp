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
#include "saf/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace saf {

namespace {

std::string fixed6(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

std::string shift_label(const ShiftSpec& s) {
    if (s.kind() == ShiftKind::None) return "none";
    return std::string(to_string(s.kind())) + ":" + std::to_string(s.severity());
}

ShiftSpec parse_shift_label(const std::string& text) {
    const auto colon = text.find(':');
    if (colon == std::string::npos) {
        const ShiftKind kind = parse_shift_kind(text);
        if (kind != ShiftKind::None) throw Error("shift '" + text + "' needs a severity, e.g. fog:5");
        return ShiftSpec::none();
    }
    int severity = 0;
    try {
        std::size_t used = 0;
        severity = std::stoi(text.substr(colon + 1), &used);
        if (used != text.size() - colon - 1) throw Error("trailing characters");
    } catch (const std::exception&) {
        throw Error("bad severity in shift '" + text + "'");
    }
    return ShiftSpec(parse_shift_kind(text.substr(0, colon)), severity);
}

std::string to_string(StatsMode m) { return m == StatsMode::UseBatchStats ? "batch" : "blend"; }

StatsMode parse_stats_mode(std::string_view text) {
    if (text == "batch") return StatsMode::UseBatchStats;
    if (text == "blend") return StatsMode::BlendEMA;
    throw Error("unknown stats mode '" + std::string(text) + "' (batch|blend)");
}

std::string to_string(TriggerMode m) { return m == TriggerMode::Automatic ? "automatic" : "manual"; }

TriggerMode parse_trigger(std::string_view text) {
    if (text == "automatic") return TriggerMode::Automatic;
    if (text == "manual") return TriggerMode::Manual;
    throw Error("unknown trigger mode '" + std::string(text) + "' (automatic|manual)");
}

template <typename T>
T get_as(const Json& j, const std::string& key) {
    try {
        return j.get<T>();
    } catch (const Json::exception& e) {
        throw Error("config key '" + key + "': " + e.what());
    }
}

std::size_t get_count(const Json& j, const std::string& key) {
    if (!j.is_number_unsigned()) {
        throw Error("config key '" + key + "' must be a non-negative integer");
    }
    return j.get<std::size_t>();
}

const Json& require(const Json& j, const char* key) {
    if (!j.is_object() || !j.contains(key)) {
        throw Error(std::string("missing key '") + key + "'");
    }
    return j.at(key);
}

std::vector<double> number_array(const Json& j, const char* key) {
    const Json& a = require(j, key);
    if (!a.is_array()) throw Error(std::string("key '") + key + "' must be an array");
    std::vector<double> out;
    for (const auto& v : a) {
        if (!v.is_number()) throw Error(std::string("key '") + key + "' must hold numbers");
        out.push_back(v.get<double>());
    }
    return out;
}

}  // namespace

TrainOutcome train_base_model(const TrainSettings& s, const CorruptionParams& corruption) {
    const LabeledSet data = gen_base_dataset(derive_seed(s.seed, 0, "train-data"), s.n_per_class);
    TrainConfig tc;
    tc.epochs = s.epochs;
    tc.batch_size = s.batch_size;
    tc.lr = s.lr;
    tc.seed = derive_seed(s.seed, 0, "train-shuffle");
    TrainResult trained = train(init_model(ArchSpec(), derive_seed(s.seed, 0, "train-init")), data, tc);
    const LabeledSet heldout =
        gen_corrupted_set(derive_seed(s.seed, 0, "train-heldout"), s.heldout_size, ShiftSpec::none(), corruption);

    TrainOutcome out;
    out.report.train_error = trained.train_error;
    out.report.heldout_error = evaluate(trained.model, heldout);
    out.report.counts = param_counts(trained.model);
    out.report.norm_affine_fraction =
        static_cast<double>(out.report.counts.norm_affine) / static_cast<double>(out.report.counts.total);
    out.model = std::move(trained.model);
    return out;
}

void RunConfig::validate() const {
    if (n_reps == 0) throw Error("reps must be >= 1");
    if (arms.empty()) throw Error("at least one arm is required");
    for (std::size_t i = 0; i < arms.size(); ++i) {
        for (std::size_t j = i + 1; j < arms.size(); ++j) {
            if (arms[i] == arms[j]) throw Error("arm '" + std::string(saf::to_string(arms[i])) + "' listed twice");
        }
    }
    selector.validate();
    adapter.validate();
    controller.validate();
    if (!(shift_probability >= 0.0 && shift_probability <= 1.0)) throw Error("shift_probability must be in [0,1]");
    for (double step : {corruption.fog_step, corruption.brightness_step, corruption.contrast_step,
                        corruption.snow_density_step, corruption.frost_step}) {
        if (!(step >= 0.0 && std::isfinite(step))) throw Error("corruption steps must be finite and >= 0");
    }
    if (!(corruption.fog_level >= 0.0 && corruption.fog_level <= 1.0)) throw Error("fog_level must be in [0,1]");
    if (train.n_per_class == 0) throw Error("train_per_class must be >= 1");
    if (train.epochs == 0) throw Error("train_epochs must be >= 1");
    if (train.batch_size < 2) throw Error("train_batch_size must be >= 2");
    if (!(train.lr > 0.0 && std::isfinite(train.lr))) throw Error("train_lr must be positive");
    if (train.heldout_size == 0) throw Error("heldout_size must be >= 1");
}

ScenarioSpec load_scenario_file(const std::filesystem::path& path) {
    const Json j = read_json_file(path);
    try {
        ScenarioSpec s = scenario_1();
        s.name = require(j, "name").get<std::string>();
        if (j.contains("items_per_interval")) {
            s.stream.items_per_interval = get_count(j.at("items_per_interval"), "items_per_interval");
        }
        const Json& sched = require(j, "schedule");
        if (!sched.is_array() || sched.empty()) throw Error("'schedule' must be a non-empty array");
        s.stream.schedule.clear();
        for (const auto& e : sched) s.stream.schedule.push_back(parse_shift_label(e.get<std::string>()));
        s.stream.intervals = s.stream.schedule.size();
        return s;
    } catch (const Json::exception& e) {
        throw Error(path.string() + ": " + e.what());
    } catch (const Error& e) {
        throw Error(path.string() + ": " + e.what());
    }
}

ScenarioSpec build_scenario(const RunConfig& c) {
    ScenarioSpec s;
    if (c.scenario_ref == "1") {
        s = scenario_1();
    } else if (c.scenario_ref == "2") {
        s = scenario_2();
    } else {
        s = load_scenario_file(c.scenario_ref);
    }
    s.selector = c.selector;
    s.adapter = c.adapter;
    s.controller = c.controller;
    s.stream.corruption = c.corruption;
    s.stream.shift_probability = c.shift_probability;
    s.oracle_mode = c.oracle;
    s.confirm_finetune = c.confirm_finetune;
    s.validate();
    return s;
}

std::string to_string(SelectorStrategy s) { return s == SelectorStrategy::Windowing ? "windowing" : "random"; }

SelectorStrategy parse_selector(std::string_view text) {
    if (text == "windowing") return SelectorStrategy::Windowing;
    if (text == "random") return SelectorStrategy::Random;
    throw Error("unknown selector '" + std::string(text) + "' (windowing|random)");
}

std::string to_string(OracleMode m) { return m == OracleMode::Provenance ? "provenance" : "exemplar"; }

OracleMode parse_oracle(std::string_view text) {
    if (text == "provenance") return OracleMode::Provenance;
    if (text == "exemplar") return OracleMode::NearestExemplar;
    throw Error("unknown oracle '" + std::string(text) + "' (provenance|exemplar)");
}

std::vector<Arm> parse_arm_list(std::string_view text) {
    std::vector<Arm> out;
    std::size_t start = 0;
    while (start <= text.size()) {
        const std::size_t comma = std::min(text.find(',', start), text.size());
        out.push_back(parse_arm(text.substr(start, comma - start)));
        start = comma + 1;
    }
    return out;
}

Json config_to_json(const RunConfig& c) {
    Json arms = Json::array();
    for (Arm a : c.arms) arms.push_back(std::string(saf::to_string(a)));
    return Json{
        {"scenario", c.scenario_ref},
        {"seed", c.seed},
        {"reps", c.n_reps},
        {"arms", arms},
        {"selector", to_string(c.selector.strategy)},
        {"budget_fraction", c.selector.budget_fraction},
        {"window_len", c.selector.window_len},
        {"percentile", c.selector.percentile},
        {"pacing_slack", c.selector.pacing_slack},
        {"tta_batch_size", c.adapter.batch_size},
        {"tta_lr", c.adapter.lr},
        {"tta_steps", c.adapter.steps_per_batch},
        {"tta_stats_mode", to_string(c.adapter.stats_mode)},
        {"tta_blend_momentum", c.adapter.blend_momentum},
        {"theta", c.controller.theta},
        {"trigger_mode", to_string(c.controller.trigger_mode)},
        {"finetune_epochs", c.controller.finetune_epochs},
        {"finetune_lr", c.controller.finetune_lr},
        {"finetune_batch", c.controller.finetune_batch},
        {"mix_clean_fraction", c.controller.mix_clean_fraction},
        {"oracle", to_string(c.oracle)},
        {"confirm_finetune", c.confirm_finetune},
        {"shift_probability", c.shift_probability},
        {"fog_step", c.corruption.fog_step},
        {"fog_level", c.corruption.fog_level},
        {"brightness_step", c.corruption.brightness_step},
        {"contrast_step", c.corruption.contrast_step},
        {"snow_density_step", c.corruption.snow_density_step},
        {"frost_step", c.corruption.frost_step},
        {"train_seed", c.train.seed},
        {"train_per_class", c.train.n_per_class},
        {"train_epochs", c.train.epochs},
        {"train_batch_size", c.train.batch_size},
        {"train_lr", c.train.lr},
        {"heldout_size", c.train.heldout_size},
        {"dump_ledger", c.dump_ledger},
        {"dump_stream", c.dump_stream},
    };
}

void apply_config_json(RunConfig& c, const Json& j) {
    if (!j.is_object()) throw Error("config must be a JSON object");
    for (const auto& [key, v] : j.items()) {
        if (key == "scenario") {
            c.scenario_ref = get_as<std::string>(v, key);
        } else if (key == "seed") {
            c.seed = get_as<std::uint64_t>(v, key);
        } else if (key == "reps") {
            c.n_reps = get_count(v, key);
        } else if (key == "arms") {
            c.arms.clear();
            for (const auto& a : v) c.arms.push_back(parse_arm(get_as<std::string>(a, key)));
        } else if (key == "selector") {
            c.selector.strategy = parse_selector(get_as<std::string>(v, key));
        } else if (key == "budget_fraction") {
            c.selector.budget_fraction = get_as<double>(v, key);
        } else if (key == "window_len") {
            c.selector.window_len = get_count(v, key);
        } else if (key == "percentile") {
            c.selector.percentile = get_as<double>(v, key);
        } else if (key == "pacing_slack") {
            c.selector.pacing_slack = get_count(v, key);
        } else if (key == "tta_batch_size") {
            c.adapter.batch_size = get_count(v, key);
        } else if (key == "tta_lr") {
            c.adapter.lr = get_as<double>(v, key);
        } else if (key == "tta_steps") {
            c.adapter.steps_per_batch = get_count(v, key);
        } else if (key == "tta_stats_mode") {
            c.adapter.stats_mode = parse_stats_mode(get_as<std::string>(v, key));
        } else if (key == "tta_blend_momentum") {
            c.adapter.blend_momentum = get_as<double>(v, key);
        } else if (key == "theta") {
            c.controller.theta = get_as<double>(v, key);
        } else if (key == "trigger_mode") {
            c.controller.trigger_mode = parse_trigger(get_as<std::string>(v, key));
        } else if (key == "finetune_epochs") {
            c.controller.finetune_epochs = get_count(v, key);
        } else if (key == "finetune_lr") {
            c.controller.finetune_lr = get_as<double>(v, key);
        } else if (key == "finetune_batch") {
            c.controller.finetune_batch = get_count(v, key);
        } else if (key == "mix_clean_fraction") {
            c.controller.mix_clean_fraction = get_as<double>(v, key);
        } else if (key == "oracle") {
            c.oracle = parse_oracle(get_as<std::string>(v, key));
        } else if (key == "confirm_finetune") {
            c.confirm_finetune = get_as<bool>(v, key);
        } else if (key == "shift_probability") {
            c.shift_probability = get_as<double>(v, key);
        } else if (key == "fog_step") {
            c.corruption.fog_step = get_as<double>(v, key);
        } else if (key == "fog_level") {
            c.corruption.fog_level = get_as<double>(v, key);
        } else if (key == "brightness_step") {
            c.corruption.brightness_step = get_as<double>(v, key);
        } else if (key == "contrast_step") {
            c.corruption.contrast_step = get_as<double>(v, key);
        } else if (key == "snow_density_step") {
            c.corruption.snow_density_step = get_as<double>(v, key);
        } else if (key == "frost_step") {
            c.corruption.frost_step = get_as<double>(v, key);
        } else if (key == "train_seed") {
            c.train.seed = get_as<std::uint64_t>(v, key);
        } else if (key == "train_per_class") {
            c.train.n_per_class = get_count(v, key);
        } else if (key == "train_epochs") {
            c.train.epochs = get_count(v, key);
        } else if (key == "train_batch_size") {
            c.train.batch_size = get_count(v, key);
        } else if (key == "train_lr") {
            c.train.lr = get_as<double>(v, key);
        } else if (key == "heldout_size") {
            c.train.heldout_size = get_count(v, key);
        } else if (key == "dump_ledger") {
            c.dump_ledger = get_as<bool>(v, key);
        } else if (key == "dump_stream") {
            c.dump_stream = get_as<bool>(v, key);
        } else {
            throw Error("unknown config key '" + key + "'");
        }
    }
}

Json read_json_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(path.string() + ": cannot open");
    try {
        return Json::parse(in);
    } catch (const Json::exception& e) {
        throw Error(path.string() + ": " + e.what());
    }
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out << text;
    if (!out) throw Error(path.string() + ": write failed");
}

std::vector<PhaseExposure> phase_exposure(const AggregateReport& report, const ScenarioSpec& spec) {
    std::vector<PhaseExposure> out;
    const ArmAggregate* saf = report.find(Arm::TtaSaf);
    if (saf == nullptr) return out;
    const auto& sched = spec.stream.schedule;
    for (std::size_t k = 0; k + 1 < sched.size(); ++k) {
        if (sched[k].kind() == ShiftKind::None || !(sched[k] == sched[k + 1])) continue;
        if (k > 0 && sched[k - 1] == sched[k]) continue;
        out.push_back({sched[k], static_cast<int>(k + 1), saf->mean_error[k], saf->mean_error[k + 1]});
    }
    return out;
}

std::string interval_csv(const AggregateReport& report) {
    std::string out = "arm,interval,mean_error,std_error\n";
    for (const auto& a : report.arms) {
        for (std::size_t k = 0; k < a.mean_error.size(); ++k) {
            out += std::string(to_string(a.arm)) + "," + std::to_string(k + 1) + "," + fixed6(a.mean_error[k]) + "," +
                   fixed6(a.std_error[k]) + "\n";
        }
    }
    return out;
}

std::string selection_csv(const std::vector<double>& windowing, const std::vector<double>& random) {
    std::string out = "interval,windowing_success,random_success\n";
    for (std::size_t k = 0; k < windowing.size(); ++k) {
        out += std::to_string(k + 1) + "," + fixed6(windowing[k]) + "," + fixed6(random.at(k)) + "\n";
    }
    return out;
}

Json train_report_json(const TrainReport& r, const TrainSettings& s) {
    return Json{
        {"train_error", r.train_error},
        {"heldout_error", r.heldout_error},
        {"total_params", r.counts.total},
        {"norm_affine_params", r.counts.norm_affine},
        {"norm_affine_fraction", r.norm_affine_fraction},
        {"settings",
         {{"seed", s.seed},
          {"per_class", s.n_per_class},
          {"epochs", s.epochs},
          {"batch_size", s.batch_size},
          {"lr", s.lr},
          {"heldout_size", s.heldout_size}}},
    };
}

Json summary_json(const AggregateReport& report, const ScenarioSpec& spec, const RunConfig& config) {
    Json schedule = Json::array();
    for (const auto& s : spec.stream.schedule) schedule.push_back(shift_label(s));
    Json arms = Json::array();
    for (const auto& a : report.arms) {
        arms.push_back({{"arm", std::string(to_string(a.arm))},
                        {"mean_error", a.mean_error},
                        {"std_error", a.std_error},
                        {"shifted_mean", a.shifted_mean},
                        {"finetune_events", a.finetune_events}});
    }
    Json phases = Json::array();
    for (const auto& p : phase_exposure(report, spec)) {
        phases.push_back({{"shift", shift_label(p.shift)},
                          {"first_interval", p.first_interval},
                          {"first_error", p.first_error},
                          {"second_error", p.second_error}});
    }
    Json j{
        {"config", config_to_json(config)},
        {"scenario", report.scenario},
        {"n_reps", report.n_reps},
        {"base_seed", report.base_seed},
        {"intervals", report.intervals},
        {"schedule", schedule},
        {"shifted_intervals", report.shifted_intervals},
        {"arms", arms},
        {"finetune_events_total", report.finetune_events_total},
        {"finetune_events_per_rep", report.finetune_events_per_rep},
        {"budget",
         {{"allocated", report.budget_allocated},
          {"max_consumed", report.max_budget_consumed},
          {"violations", report.budget_violations}}},
        {"phase_exposure", phases},
    };
    j["offline_over_saf"] = report.offline_over_saf ? Json(*report.offline_over_saf) : Json(nullptr);
    j["tta_over_saf"] = report.tta_over_saf ? Json(*report.tta_over_saf) : Json(nullptr);
    if (report.windowing_success && report.random_success) {
        j["selection"] = {{"windowing_success", *report.windowing_success},
                          {"random_success", *report.random_success}};
    } else {
        j["selection"] = nullptr;
    }
    return j;
}

RenderedReport render_summary(const Json& summary) {
    try {
        const std::string scenario = require(summary, "scenario").get<std::string>();
        const auto intervals = require(summary, "intervals").get<std::size_t>();
        const Json& arms = require(summary, "arms");
        if (!arms.is_array() || arms.empty()) throw Error("'arms' must be a non-empty array");

        std::vector<std::string> names;
        std::vector<std::vector<double>> series;
        for (const auto& a : arms) {
            names.push_back(require(a, "arm").get<std::string>());
            series.push_back(number_array(a, "mean_error"));
            if (series.back().size() != intervals) throw Error("'mean_error' length differs from 'intervals'");
        }

        RenderedReport out;
        std::ostringstream table;
        table << scenario << ": " << require(summary, "n_reps").get<std::size_t>() << " replications, seed "
              << require(summary, "base_seed").get<std::uint64_t>() << "\n\n";

        out.error_series = "interval";
        table << "interval";
        for (const auto& n : names) {
            out.error_series += "," + n;
            char buf[32];
            std::snprintf(buf, sizeof buf, " %10s", n.c_str());
            table << buf;
        }
        out.error_series += "\n";
        table << "\n";
        for (std::size_t k = 0; k < intervals; ++k) {
            out.error_series += std::to_string(k + 1);
            char buf[32];
            std::snprintf(buf, sizeof buf, "%8zu", k + 1);
            table << buf;
            for (const auto& s : series) {
                out.error_series += "," + fixed6(s[k]);
                std::snprintf(buf, sizeof buf, " %10.4f", s[k]);
                table << buf;
            }
            out.error_series += "\n";
            table << "\n";
        }

        table << "\nfine-tune events: " << require(summary, "finetune_events_total").get<std::size_t>() << "\n";
        for (const char* key : {"offline_over_saf", "tta_over_saf"}) {
            const Json& v = require(summary, key);
            table << key << ": " << (v.is_null() ? std::string("n/a") : fixed6(v.get<double>())) << "\n";
        }

        const Json& sel = require(summary, "selection");
        if (!sel.is_null()) {
            const auto w = number_array(sel, "windowing_success");
            const auto r = number_array(sel, "random_success");
            if (w.size() != intervals || r.size() != intervals) {
                throw Error("selection series length differs from 'intervals'");
            }
            out.selection_series = "interval,windowing,random\n";
            table << "\nselection success\ninterval  windowing     random\n";
            for (std::size_t k = 0; k < intervals; ++k) {
                *out.selection_series += std::to_string(k + 1) + "," + fixed6(w[k]) + "," + fixed6(r[k]) + "\n";
                char buf[64];
                std::snprintf(buf, sizeof buf, "%8zu %10.4f %10.4f\n", k + 1, w[k], r[k]);
                table << buf;
            }
        }
        out.table = table.str();
        return out;
    } catch (const Json::exception& e) {
        throw Error(e.what());
    }
}

}  // namespace saf
