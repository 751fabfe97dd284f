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
#include "saf/scenario.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <functional>
#include <thread>

namespace saf {

namespace {

void parallel_for(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& body) {
    workers = std::max<std::size_t>(1, std::min(workers, n));
    if (workers == 1) {
        for (std::size_t i = 0; i < n; ++i) body(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::exception_ptr> errors(workers);
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
            try {
                for (std::size_t i = next++; i < n; i = next++) body(i);
            } catch (...) {
                errors[w] = std::current_exception();
            }
        });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
}

ScenarioSpec base_scenario(std::string name) {
    ScenarioSpec s;
    s.name = std::move(name);
    s.stream.intervals = 7;
    s.stream.items_per_interval = 240;
    return s;
}

}  // namespace

std::vector<int> ScenarioSpec::shifted_intervals() const {
    std::vector<int> out;
    for (std::size_t k = 0; k < stream.schedule.size(); ++k) {
        if (stream.schedule[k].kind() != ShiftKind::None) out.push_back(static_cast<int>(k + 1));
    }
    return out;
}

void ScenarioSpec::validate() const {
    if (stream.intervals == 0 || stream.items_per_interval == 0) {
        throw Error("scenario needs at least one interval and one item per interval");
    }
    if (stream.schedule.size() != stream.intervals) {
        throw Error("schedule length must equal the interval count");
    }
    if (!(stream.shift_probability >= 0.0 && stream.shift_probability <= 1.0)) {
        throw Error("shift_probability must be in [0,1]");
    }
    selector.validate();
    adapter.validate();
    controller.validate();
}

ScenarioSpec scenario_1() {
    ScenarioSpec s = base_scenario("scenario-1");
    s.stream.schedule.assign(7, ShiftSpec::none());
    return s;
}

ScenarioSpec scenario_2() {
    ScenarioSpec s = base_scenario("scenario-2");
    s.stream.schedule = {ShiftSpec::none(),         ShiftSpec(ShiftKind::Fog, 5),   ShiftSpec(ShiftKind::Fog, 5),
                         ShiftSpec(ShiftKind::Snow, 5), ShiftSpec(ShiftKind::Snow, 5), ShiftSpec(ShiftKind::Frost, 5),
                         ShiftSpec(ShiftKind::Frost, 5)};
    return s;
}

std::string_view to_string(Arm arm) {
    switch (arm) {
        case Arm::Offline: return "offline";
        case Arm::TtaOnly: return "tta";
        case Arm::TtaSaf: return "tta_saf";
    }
    return "offline";
}

Arm parse_arm(std::string_view text) {
    for (Arm a : {Arm::Offline, Arm::TtaOnly, Arm::TtaSaf}) {
        if (text == to_string(a)) return a;
    }
    throw Error("unknown arm '" + std::string(text) + "'");
}

RunResources make_resources(ModelParams base_model, const ScenarioSpec& spec, std::uint64_t seed) {
    RunResources r;
    r.base_model = std::move(base_model);
    r.clean_reserve = gen_corrupted_set(derive_seed(seed, 0, "clean-reserve"), kCleanReserveSize, ShiftSpec::none(),
                                        spec.stream.corruption);
    if (spec.oracle_mode == OracleMode::NearestExemplar) {
        r.exemplars.emplace(build_exemplar_bank(kExemplarBankSeed, kDefaultExemplarsPerGroup, spec.stream.corruption));
    }
    return r;
}

std::uint64_t replication_seed(std::uint64_t base_seed, std::size_t replication) {
    return derive_seed(base_seed, replication, "replication");
}

std::uint64_t stream_seed(std::uint64_t rep_seed) { return derive_seed(rep_seed, 0, "stream"); }

ArmResult run_arm(const ScenarioSpec& spec, Arm arm, const RunResources& resources, std::uint64_t seed) {
    return run_arm(spec, arm, gen_stream(spec.stream, stream_seed(seed)), resources, seed);
}

ArmResult run_arm(const ScenarioSpec& spec, Arm arm, const std::vector<StreamItem>& stream,
                  const RunResources& resources, std::uint64_t seed) {
    spec.validate();
    if (stream.size() != spec.total_items()) {
        throw Error("stream length does not match the scenario");
    }
    const std::size_t per = spec.stream.items_per_interval;
    const std::size_t bs = spec.adapter.batch_size;
    const auto width = static_cast<Eigen::Index>(resources.base_model.arch.input_dim());

    ArmResult result;
    result.arm = arm;
    result.predictions.reserve(stream.size());

    std::optional<TtaAdapter> adapter;
    if (arm != Arm::Offline) {
        adapter.emplace(resources.base_model, spec.adapter);
    }

    const bool saf = arm == Arm::TtaSaf;
    std::optional<OnlineSelector> selector;
    std::optional<ExpertOracle> oracle;
    if (saf) {
        selector.emplace(spec.selector, per, derive_seed(seed, 0, "selector"));
        oracle.emplace(spec.oracle_mode, resources.exemplars ? &*resources.exemplars : nullptr);
    }
    ModelParams deployed = resources.base_model;
    RelabeledStore store;
    int since_interval = 1;

    for (std::size_t k = 0; k < spec.stream.intervals; ++k) {
        const int interval = static_cast<int>(k + 1);
        const std::size_t begin = k * per;
        std::size_t wrong = 0;
        BudgetState budget{saf ? selector->allocated() : 0, 0};
        std::vector<std::uint64_t> ids;
        std::vector<double> confidences;

        for (std::size_t start = begin; start < begin + per; start += bs) {
            const std::size_t len = std::min(bs, begin + per - start);
            Matrix batch(static_cast<Eigen::Index>(len), width);
            for (std::size_t i = 0; i < len; ++i) {
                batch.row(static_cast<Eigen::Index>(i)) = stream[start + i].image.transpose();
            }
            const BatchPredictions preds = arm == Arm::Offline ? forward(deployed, batch, NormMode::RunningStats)
                                                               : adapter->adapt_and_predict(batch);
            for (std::size_t i = 0; i < len; ++i) {
                const StreamItem& item = stream[start + i];
                const int label = preds.predicted_labels[i];
                result.predictions.push_back(label);
                wrong += label != item.provenance.true_label ? 1 : 0;
                if (!saf) continue;
                ids.push_back(item.id);
                confidences.push_back(preds.confidences[i]);
                if (selector->offer(item.id, preds.confidences[i]) == SelectDecision::Select) {
                    auto outcome = oracle->process_selected(item, label, budget);
                    result.ledger.append(outcome.record);
                    store.emplace(item.id, RelabeledSample{item.image, item.provenance.true_label});
                }
            }
        }
        result.interval_error.push_back(static_cast<double>(wrong) / static_cast<double>(per));
        if (!saf) continue;

        IntervalSelection sel;
        sel.summary = selector->end_interval();
        sel.success_rate = selection_success_rate(sel.summary.selected_ids, ids, confidences, sel.summary.allocated);
        sel.ledger_records = result.ledger.count_in_interval(interval);
        sel.budget_consumed = budget.consumed;
        result.selections.push_back(std::move(sel));

        const Decision decision = end_of_interval(result.ledger, interval, since_interval, spec.controller);
        DecisionLogEntry entry;
        entry.interval = interval;
        if (decision.proxy) {
            entry.proxy_rate = decision.proxy->rate;
            entry.validated = decision.proxy->validated;
        }
        entry.decision = "keep";
        if (decision.fine_tune()) {
            entry.culprit = decision.culprit->dominant_kind;
            entry.finetune_samples = decision.culprit->sample_ids.size();
            const bool confirmed = spec.controller.trigger_mode == TriggerMode::Automatic || spec.confirm_finetune;
            if (confirmed) {
                entry.decision = "finetune";
                FineTuneResult ft = fine_tune(deployed, *decision.culprit, store, resources.clean_reserve,
                                              spec.controller, derive_seed(seed, k, "finetune"));
                deployed = std::move(ft.model);
                deploy(deployed, *adapter);
                since_interval = interval + 1;
                result.finetunes.push_back({interval, decision.culprit->dominant_kind,
                                            decision.culprit->sample_ids.size(), ft.final_loss});
            } else {
                entry.decision = "finetune-unconfirmed";
            }
        }
        result.decisions.push_back(entry);
    }
    return result;
}

const ArmAggregate* AggregateReport::find(Arm arm) const {
    for (const auto& a : arms) {
        if (a.arm == arm) return &a;
    }
    return nullptr;
}

namespace {

struct RepOutcome {
    std::vector<ArmResult> arms;
    std::optional<std::vector<double>> windowing;
    std::optional<std::vector<double>> random;
};

std::vector<double> success_series(const ArmResult& r) {
    std::vector<double> out;
    for (const auto& s : r.selections) out.push_back(s.success_rate);
    return out;
}

void dump_replication(const ReplicateOptions& options, std::size_t rep, const std::vector<StreamItem>& stream,
                      const std::vector<ArmResult>& arms) {
    if (!options.dump_dir) return;
    std::filesystem::create_directories(*options.dump_dir);
    if (options.dump_stream) {
        std::ofstream out(*options.dump_dir / ("stream_rep" + std::to_string(rep) + ".csv"), std::ios::binary);
        write_stream_csv(stream, out);
    }
    if (options.dump_ledger) {
        for (const auto& a : arms) {
            if (a.arm != Arm::TtaSaf) continue;
            a.ledger.export_csv(*options.dump_dir /
                                ("ledger_" + std::string(to_string(a.arm)) + "_rep" + std::to_string(rep) + ".csv"));
        }
    }
}

}  // namespace

AggregateReport replicate(const ScenarioSpec& spec, const std::vector<Arm>& arms, std::size_t n_reps,
                          std::uint64_t base_seed, const RunResources& resources, const ReplicateOptions& options) {
    if (n_reps == 0) {
        throw Error("n_reps must be >= 1");
    }
    spec.validate();
    const bool has_saf = std::find(arms.begin(), arms.end(), Arm::TtaSaf) != arms.end();
    std::vector<RepOutcome> outcomes(n_reps);

    parallel_for(n_reps, options.workers, [&](std::size_t rep) {
        const std::uint64_t seed = replication_seed(base_seed, rep);
        const std::vector<StreamItem> stream = gen_stream(spec.stream, stream_seed(seed));
        RepOutcome& out = outcomes[rep];
        for (Arm arm : arms) {
            out.arms.push_back(run_arm(spec, arm, stream, resources, seed));
        }
        if (has_saf && options.compare_selection) {
            const ArmResult& primary = *std::find_if(out.arms.begin(), out.arms.end(),
                                                     [](const ArmResult& r) { return r.arm == Arm::TtaSaf; });
            ScenarioSpec other = spec;
            other.selector.strategy = spec.selector.strategy == SelectorStrategy::Windowing ? SelectorStrategy::Random
                                                                                            : SelectorStrategy::Windowing;
            const ArmResult companion = run_arm(other, Arm::TtaSaf, stream, resources, seed);
            const bool primary_windowing = spec.selector.strategy == SelectorStrategy::Windowing;
            out.windowing = success_series(primary_windowing ? primary : companion);
            out.random = success_series(primary_windowing ? companion : primary);
        }
        dump_replication(options, rep, stream, out.arms);
    });

    AggregateReport rep;
    rep.scenario = spec.name;
    rep.n_reps = n_reps;
    rep.base_seed = base_seed;
    rep.intervals = spec.stream.intervals;
    rep.shifted_intervals = spec.shifted_intervals();
    rep.budget_allocated = spec.allocated_per_interval();
    rep.finetune_events_per_rep.assign(n_reps, 0);

    const std::size_t K = spec.stream.intervals;
    const double n = static_cast<double>(n_reps);
    for (std::size_t a = 0; a < arms.size(); ++a) {
        ArmAggregate agg;
        agg.arm = arms[a];
        agg.mean_error.assign(K, 0.0);
        agg.std_error.assign(K, 0.0);
        for (const auto& o : outcomes) {
            for (std::size_t k = 0; k < K; ++k) agg.mean_error[k] += o.arms[a].interval_error[k];
        }
        for (double& m : agg.mean_error) m /= n;
        if (n_reps > 1) {
            for (const auto& o : outcomes) {
                for (std::size_t k = 0; k < K; ++k) {
                    const double d = o.arms[a].interval_error[k] - agg.mean_error[k];
                    agg.std_error[k] += d * d;
                }
            }
            for (double& s : agg.std_error) s = std::sqrt(s / (n - 1.0));
        }
        if (!rep.shifted_intervals.empty()) {
            for (int k : rep.shifted_intervals) agg.shifted_mean += agg.mean_error[static_cast<std::size_t>(k - 1)];
            agg.shifted_mean /= static_cast<double>(rep.shifted_intervals.size());
        }
        for (std::size_t r = 0; r < n_reps; ++r) {
            const ArmResult& res = outcomes[r].arms[a];
            agg.finetune_events += res.finetunes.size();
            if (res.arm == Arm::TtaSaf) {
                rep.finetune_events_per_rep[r] += res.finetunes.size();
                for (const auto& s : res.selections) {
                    rep.max_budget_consumed = std::max(rep.max_budget_consumed, s.budget_consumed);
                    const bool ok = s.budget_consumed <= s.summary.allocated && s.ledger_records == s.budget_consumed &&
                                    s.summary.consumed == s.budget_consumed;
                    rep.budget_violations += ok ? 0 : 1;
                }
            }
        }
        rep.finetune_events_total += agg.arm == Arm::TtaSaf ? agg.finetune_events : 0;
        rep.arms.push_back(std::move(agg));
    }

    if (has_saf && options.compare_selection) {
        std::vector<double> w(K, 0.0);
        std::vector<double> r(K, 0.0);
        for (const auto& o : outcomes) {
            for (std::size_t k = 0; k < K; ++k) {
                w[k] += (*o.windowing)[k] / n;
                r[k] += (*o.random)[k] / n;
            }
        }
        rep.windowing_success = std::move(w);
        rep.random_success = std::move(r);
    }

    const ArmAggregate* off = rep.find(Arm::Offline);
    const ArmAggregate* tta = rep.find(Arm::TtaOnly);
    const ArmAggregate* sf = rep.find(Arm::TtaSaf);
    if (!rep.shifted_intervals.empty() && sf != nullptr && sf->shifted_mean > 0.0) {
        if (off != nullptr) rep.offline_over_saf = off->shifted_mean / sf->shifted_mean;
        if (tta != nullptr) rep.tta_over_saf = tta->shifted_mean / sf->shifted_mean;
    }
    return rep;
}

SelectionComparison compare_selection(const ScenarioSpec& spec, std::size_t n_reps, std::uint64_t base_seed,
                                      const RunResources& resources, std::size_t workers) {
    if (spec.shifted_intervals().empty()) {
        throw Error("selection comparison needs a scenario with a shift schedule");
    }
    ReplicateOptions options;
    options.workers = workers;
    options.compare_selection = true;
    ScenarioSpec windowing = spec;
    windowing.selector.strategy = SelectorStrategy::Windowing;
    const AggregateReport rep = replicate(windowing, {Arm::TtaSaf}, n_reps, base_seed, resources, options);
    return {*rep.windowing_success, *rep.random_success};
}

}  // namespace saf
