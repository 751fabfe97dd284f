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
#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>

#include "saf/report.hpp"
#include "support.hpp"

namespace saf {
namespace {

namespace fs = std::filesystem;
using testing::quick_model;

std::size_t line_count(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

TEST(RunConfig, JsonRoundTrip) {
    RunConfig c;
    c.seed = 99;
    c.n_reps = 5;
    c.arms = {Arm::TtaSaf, Arm::Offline};
    c.selector.strategy = SelectorStrategy::Random;
    c.oracle = OracleMode::NearestExemplar;
    c.controller.trigger_mode = TriggerMode::Manual;
    c.adapter.stats_mode = StatsMode::BlendEMA;
    c.corruption.fog_step = 0.11;
    const Json j = config_to_json(c);
    RunConfig back;
    apply_config_json(back, j);
    EXPECT_EQ(config_to_json(back), j);
    EXPECT_EQ(back.arms, c.arms);
}

TEST(RunConfig, RejectsUnknownKeysAndBadValues) {
    RunConfig c;
    EXPECT_THROW(apply_config_json(c, Json{{"nope", 1}}), Error);
    EXPECT_THROW(apply_config_json(c, Json{{"reps", -1}}), Error);
    EXPECT_THROW(apply_config_json(c, Json{{"theta", "high"}}), Error);
    EXPECT_THROW(apply_config_json(c, Json{{"selector", "greedy"}}), Error);
    EXPECT_THROW(apply_config_json(c, Json::array()), Error);
    RunConfig bad;
    bad.n_reps = 0;
    EXPECT_THROW(bad.validate(), Error);
    bad = RunConfig{};
    bad.arms = {Arm::Offline, Arm::Offline};
    EXPECT_THROW(bad.validate(), Error);
    bad = RunConfig{};
    bad.controller.theta = 2.0;
    EXPECT_THROW(bad.validate(), Error);
}

TEST(RunConfig, ArmLists) {
    EXPECT_EQ(parse_arm_list("offline,tta_saf"), (std::vector<Arm>{Arm::Offline, Arm::TtaSaf}));
    EXPECT_THROW(parse_arm_list("offline,"), Error);
}

TEST(BuildScenario, PresetsAndKnobs) {
    RunConfig c;
    c.scenario_ref = "1";
    c.controller.theta = 0.3;
    const ScenarioSpec s = build_scenario(c);
    EXPECT_EQ(s.name, "scenario-1");
    EXPECT_DOUBLE_EQ(s.controller.theta, 0.3);
    c.scenario_ref = "2";
    EXPECT_EQ(build_scenario(c).shifted_intervals().size(), 6u);
}

TEST(BuildScenario, FromFile) {
    const fs::path p = fs::temp_directory_path() / "saf_scenario_test.json";
    write_text_file(p, R"({"name": "custom", "items_per_interval": 48, "schedule": ["none", "snow:3", "frost:2"]})");
    RunConfig c;
    c.scenario_ref = p.string();
    const ScenarioSpec s = build_scenario(c);
    EXPECT_EQ(s.name, "custom");
    EXPECT_EQ(s.stream.intervals, 3u);
    EXPECT_EQ(s.stream.items_per_interval, 48u);
    EXPECT_EQ(s.stream.schedule[1], ShiftSpec(ShiftKind::Snow, 3));
    write_text_file(p, R"({"name": "custom", "schedule": ["fog"]})");
    EXPECT_THROW(build_scenario(c), Error);
    write_text_file(p, R"({"name": "custom", "schedule": ["fog:9"]})");
    EXPECT_THROW(build_scenario(c), Error);
    fs::remove(p);
    EXPECT_THROW(build_scenario(c), Error);
}

TEST(TrainBaseModel, DeterministicCheckpointAndSmallAffineFraction) {
    TrainSettings s;
    s.n_per_class = 5;
    s.epochs = 1;
    s.heldout_size = 20;
    const TrainOutcome a = train_base_model(s);
    const TrainOutcome b = train_base_model(s);
    EXPECT_TRUE(a.model.bit_equal(b.model));
    EXPECT_LT(a.report.norm_affine_fraction, 0.01);
    const Json j = train_report_json(a.report, s);
    EXPECT_EQ(j.at("total_params"), 137738u);
    EXPECT_LT(j.at("norm_affine_fraction").get<double>(), 0.01);
}

class SummaryTest : public ::testing::Test {
  protected:
    static void SetUpTestSuite() {
        config_ = new RunConfig;
        config_->n_reps = 2;
        spec_ = new ScenarioSpec(build_scenario(*config_));
        spec_->stream.items_per_interval = 64;
        const RunResources res = make_resources(quick_model(), *spec_, 1);
        report_ = new AggregateReport(replicate(*spec_, config_->arms, 2, config_->seed, res, {}));
    }
    static void TearDownTestSuite() {
        delete report_;
        delete spec_;
        delete config_;
    }

    static RunConfig* config_;
    static ScenarioSpec* spec_;
    static AggregateReport* report_;
};

RunConfig* SummaryTest::config_ = nullptr;
ScenarioSpec* SummaryTest::spec_ = nullptr;
AggregateReport* SummaryTest::report_ = nullptr;

TEST_F(SummaryTest, IntervalCsvHeaderAndRows) {
    const std::string csv = interval_csv(*report_);
    EXPECT_EQ(csv.substr(0, csv.find('\n')), "arm,interval,mean_error,std_error");
    EXPECT_EQ(line_count(csv), 1u + 3u * 7u);
    EXPECT_NE(csv.find("\ntta_saf,7,"), std::string::npos);
}

TEST_F(SummaryTest, SelectionCsv) {
    const std::string csv = selection_csv(*report_->windowing_success, *report_->random_success);
    EXPECT_EQ(csv.substr(0, csv.find('\n')), "interval,windowing_success,random_success");
    EXPECT_EQ(line_count(csv), 8u);
}

TEST_F(SummaryTest, SummaryCarriesRatiosConfigAndCounts) {
    const Json j = summary_json(*report_, *spec_, *config_);
    EXPECT_TRUE(j.contains("offline_over_saf"));
    EXPECT_TRUE(j.contains("tta_over_saf"));
    EXPECT_EQ(j.at("finetune_events_total").get<std::size_t>(), report_->finetune_events_total);
    EXPECT_EQ(j.at("config"), config_to_json(*config_));
    EXPECT_EQ(j.at("phase_exposure").size(), 3u);
    EXPECT_EQ(j.at("schedule")[1], "fog:5");
}

TEST_F(SummaryTest, RenderedSeriesHaveOneRowPerInterval) {
    const Json j = summary_json(*report_, *spec_, *config_);
    const RenderedReport r = render_summary(j);
    EXPECT_EQ(r.error_series.substr(0, r.error_series.find('\n')), "interval,offline,tta,tta_saf");
    EXPECT_EQ(line_count(r.error_series), 8u);
    ASSERT_TRUE(r.selection_series.has_value());
    EXPECT_EQ(line_count(*r.selection_series), 8u);
    const RenderedReport again = render_summary(Json::parse(j.dump(2)));
    EXPECT_EQ(again.error_series, r.error_series);
    EXPECT_EQ(again.table, r.table);
}

TEST_F(SummaryTest, MalformedSummariesAreRejected) {
    Json j = summary_json(*report_, *spec_, *config_);
    Json missing = j;
    missing.erase("arms");
    EXPECT_THROW(render_summary(missing), Error);
    Json short_series = j;
    short_series["arms"][0]["mean_error"].erase(0);
    EXPECT_THROW(render_summary(short_series), Error);
    EXPECT_THROW(render_summary(Json::array()), Error);
}

TEST(ZeroShiftReport, FlatLowErrorForAllArms) {
    RunConfig c;
    c.scenario_ref = "1";
    ScenarioSpec spec = build_scenario(c);
    spec.stream.items_per_interval = 64;
    const RunResources res = make_resources(quick_model(), spec, 1);
    ReplicateOptions opt;
    opt.compare_selection = false;
    const AggregateReport rep = replicate(spec, c.arms, 2, 3, res, opt);
    for (const auto& a : rep.arms) {
        for (double e : a.mean_error) EXPECT_LE(e, 0.1) << to_string(a.arm);
    }
    EXPECT_EQ(rep.finetune_events_total, 0u);
    const Json j = summary_json(rep, spec, c);
    EXPECT_TRUE(j.at("offline_over_saf").is_null());
    EXPECT_TRUE(j.at("selection").is_null());
    EXPECT_FALSE(render_summary(j).selection_series.has_value());
}

}  // namespace
}  // namespace saf
