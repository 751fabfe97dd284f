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
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "saf/report.hpp"

namespace fs = std::filesystem;
using namespace saf;

namespace {

constexpr const char* kCheckpointName = "base_model.ckpt";

struct Flags {
    std::string config;
    std::string scenario;
    std::uint64_t seed = 0;
    std::size_t reps = 0;
    std::string arms;
    std::string out = "saf_out";
    std::string checkpoint;
    bool dump_ledger = false;
    bool dump_stream = false;
    std::string oracle;
    std::string selector;
    std::size_t workers = 0;
    bool confirm_finetune = false;
    std::vector<std::string> summaries;
};

struct Handles {
    CLI::Option* config = nullptr;
    CLI::Option* scenario = nullptr;
    CLI::Option* seed = nullptr;
    CLI::Option* reps = nullptr;
    CLI::Option* arms = nullptr;
    CLI::Option* checkpoint = nullptr;
    CLI::Option* dump_ledger = nullptr;
    CLI::Option* dump_stream = nullptr;
    CLI::Option* oracle = nullptr;
    CLI::Option* selector = nullptr;
    CLI::Option* workers = nullptr;
    CLI::Option* confirm = nullptr;
};

bool given(const CLI::Option* o) { return o != nullptr && o->count() > 0; }

// Defaults, then the config file, then environment variables and flags.
RunConfig resolve(const Flags& f, const Handles& h) {
    RunConfig c;
    if (given(h.config)) apply_config_json(c, read_json_file(f.config));
    if (given(h.scenario)) c.scenario_ref = f.scenario;
    if (given(h.seed)) c.seed = f.seed;
    if (given(h.reps)) c.n_reps = f.reps;
    if (given(h.arms)) c.arms = parse_arm_list(f.arms);
    if (given(h.oracle)) c.oracle = parse_oracle(f.oracle);
    if (given(h.selector)) c.selector.strategy = parse_selector(f.selector);
    if (given(h.confirm)) c.confirm_finetune = f.confirm_finetune;
    if (given(h.dump_ledger)) c.dump_ledger = f.dump_ledger;
    if (given(h.dump_stream)) c.dump_stream = f.dump_stream;
    c.validate();
    return c;
}

std::size_t worker_count(const Flags& f, const Handles& h) {
    if (given(h.workers) && f.workers > 0) return f.workers;
    return std::max(1u, std::thread::hardware_concurrency());
}

ModelParams load_base(const Flags& f, const Handles& h) {
    const fs::path path = given(h.checkpoint) ? fs::path(f.checkpoint) : fs::path(f.out) / kCheckpointName;
    if (!fs::exists(path)) throw Error("checkpoint not found: " + path.string());
    return load_checkpoint(path);
}

void cmd_train(const Flags& f, const Handles& h) {
    RunConfig c;
    if (given(h.config)) apply_config_json(c, read_json_file(f.config));
    if (given(h.seed)) c.train.seed = f.seed;
    c.validate();
    const fs::path out(f.out);
    fs::create_directories(out);
    const TrainOutcome t = train_base_model(c.train, c.corruption);
    save_checkpoint(t.model, out / kCheckpointName);
    write_text_file(out / "train_report.json", train_report_json(t.report, c.train).dump(2) + "\n");
    std::printf("trained base model: train error %.4f, held-out error %.4f, norm-affine fraction %.6f\n",
                t.report.train_error, t.report.heldout_error, t.report.norm_affine_fraction);
    std::printf("wrote %s\n", (out / kCheckpointName).string().c_str());
}

void write_outputs(const fs::path& out, const AggregateReport& report, const ScenarioSpec& spec,
                   const RunConfig& c) {
    write_text_file(out / "intervals.csv", interval_csv(report));
    if (report.windowing_success && report.random_success) {
        write_text_file(out / "selection.csv", selection_csv(*report.windowing_success, *report.random_success));
    }
    write_text_file(out / "summary.json", summary_json(report, spec, c).dump(2) + "\n");
}

void run_replicate(const Flags& f, const Handles& h, RunConfig c) {
    const ScenarioSpec spec = build_scenario(c);
    const fs::path out(f.out);
    fs::create_directories(out);
    const RunResources res = make_resources(load_base(f, h), spec, derive_seed(c.seed, 0, "resources"));
    ReplicateOptions opt;
    opt.workers = worker_count(f, h);
    opt.dump_ledger = c.dump_ledger;
    opt.dump_stream = c.dump_stream;
    if (c.dump_ledger || c.dump_stream) opt.dump_dir = out / "dumps";
    const AggregateReport report = replicate(spec, c.arms, c.n_reps, c.seed, res, opt);
    write_outputs(out, report, spec, c);
    std::printf("%s: %zu replications, fine-tune events %zu\n", spec.name.c_str(), report.n_reps,
                report.finetune_events_total);
    std::printf("wrote %s\n", (out / "summary.json").string().c_str());
}

void cmd_replicate(const Flags& f, const Handles& h) { run_replicate(f, h, resolve(f, h)); }

void cmd_compare_selection(const Flags& f, const Handles& h) {
    RunConfig c = resolve(f, h);
    c.arms = {Arm::TtaSaf};
    if (build_scenario(c).shifted_intervals().empty()) {
        throw Error("selection comparison needs a scenario with a shift schedule");
    }
    run_replicate(f, h, c);
}

void cmd_report(const Flags& f) {
    const fs::path out(f.out);
    std::string all;
    for (const auto& s : f.summaries) {
        const fs::path in(s);
        RenderedReport r;
        try {
            r = render_summary(read_json_file(in));
        } catch (const Error& e) {
            const std::string msg = e.what();
            throw Error(msg.rfind(in.string(), 0) == 0 ? msg : in.string() + ": " + msg);
        }
        const std::string stem = in.stem().string();
        write_text_file(out / (stem + "_error_series.csv"), r.error_series);
        if (r.selection_series) write_text_file(out / (stem + "_selection_series.csv"), *r.selection_series);
        write_text_file(out / (stem + "_report.txt"), r.table);
        all += r.table;
    }
    std::cout << all;
}

void add_run_flags(CLI::App* cmd, Flags& f, Handles& h, bool with_arms) {
    h.scenario = cmd->add_option("--scenario", f.scenario, "1, 2 or a scenario JSON file")->envname("SAFSIM_SCENARIO");
    h.reps = cmd->add_option("--reps", f.reps, "replications (default 100)")->envname("SAFSIM_REPS");
    if (with_arms) {
        h.arms = cmd->add_option("--arms", f.arms, "comma list of offline,tta,tta_saf")->envname("SAFSIM_ARMS");
    }
    h.checkpoint = cmd->add_option("--checkpoint", f.checkpoint, "base model (default OUT/base_model.ckpt)")
                       ->envname("SAFSIM_CHECKPOINT");
    h.dump_ledger = cmd->add_flag("--dump-ledger", f.dump_ledger, "write per-replication ledgers")
                        ->envname("SAFSIM_DUMP_LEDGER");
    h.dump_stream = cmd->add_flag("--dump-stream", f.dump_stream, "write per-replication streams")
                        ->envname("SAFSIM_DUMP_STREAM");
    h.oracle = cmd->add_option("--oracle", f.oracle, "provenance|exemplar")->envname("SAFSIM_ORACLE");
    h.selector = cmd->add_option("--selector", f.selector, "windowing|random")->envname("SAFSIM_SELECTOR");
    h.workers = cmd->add_option("--workers", f.workers, "worker threads (default: all cores)")
                    ->envname("SAFSIM_WORKERS");
    h.confirm = cmd->add_flag("--confirm-finetune", f.confirm_finetune, "confirm fine-tunes in manual trigger mode")
                    ->envname("SAFSIM_CONFIRM_FINETUNE");
}

void add_common_flags(CLI::App* cmd, Flags& f, Handles& h) {
    h.config = cmd->add_option("--config", f.config, "JSON config file")->envname("SAFSIM_CONFIG");
    h.seed = cmd->add_option("--seed", f.seed, "base seed")->envname("SAFSIM_SEED");
    cmd->add_option("--out", f.out, "output directory")->envname("SAFSIM_OUT");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Test-time adaptation with systematic active fine-tuning: simulation driver"};
    app.require_subcommand(1);
    Flags f;
    Handles train_h, rep_h, cmp_h;

    auto* train = app.add_subcommand("train", "train the base model and write a checkpoint");
    add_common_flags(train, f, train_h);

    auto* rep = app.add_subcommand("replicate", "run arms over replicated scenario streams");
    add_common_flags(rep, f, rep_h);
    add_run_flags(rep, f, rep_h, true);

    auto* cmp = app.add_subcommand("compare-selection", "compare windowing and random selection");
    add_common_flags(cmp, f, cmp_h);
    add_run_flags(cmp, f, cmp_h, false);

    auto* report = app.add_subcommand("report", "render summaries into series files and a text table");
    report->add_option("summaries", f.summaries, "summary.json files")->required()->check(CLI::ExistingFile);
    report->add_option("--out", f.out, "output directory")->envname("SAFSIM_OUT");

    CLI11_PARSE(app, argc, argv);

    try {
        if (train->parsed()) cmd_train(f, train_h);
        if (rep->parsed()) cmd_replicate(f, rep_h);
        if (cmp->parsed()) cmd_compare_selection(f, cmp_h);
        if (report->parsed()) cmd_report(f);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "safsim: error: %s\n", e.what());
        return 1;
    }
    return 0;
}
