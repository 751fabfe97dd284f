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

#include <filesystem>
#include <sstream>

#include "support.hpp"

namespace saf {
namespace {

LedgerRecord rec(int interval, std::uint64_t id, bool match, ShiftSpec shift = {}) {
    LedgerRecord r;
    r.interval = interval;
    r.item_id = id;
    r.image_ref = id;
    r.true_label = 3;
    r.predicted_label = match ? 3 : 4;
    r.match = match;
    r.shift = shift;
    return r;
}

const ShiftSpec kFog5(ShiftKind::Fog, 5);
const ShiftSpec kFog4(ShiftKind::Fog, 4);
const ShiftSpec kSnow5(ShiftKind::Snow, 5);
const ShiftSpec kSnow4(ShiftKind::Snow, 4);

TEST(Ledger, AppendEnforcesOrderAndConsistency) {
    CurationLedger l;
    l.append(rec(2, 0, true));
    l.append(rec(2, 1, false));
    l.append(rec(3, 2, true));
    try {
        l.append(rec(2, 3, true));
        FAIL() << "expected out-of-order error";
    } catch (const Error& e) {
        EXPECT_EQ(std::string(e.what()).rfind("out-of-order interval", 0), 0u);
    }
    LedgerRecord bad = rec(3, 4, true);
    bad.predicted_label = 7;
    EXPECT_THROW(l.append(bad), Error);
    EXPECT_EQ(l.size(), 3u);
}

TEST(Ledger, ProxyRatePerInterval) {
    CurationLedger l;
    l.append(rec(1, 0, true));
    l.append(rec(1, 1, false, kFog5));
    l.append(rec(1, 2, true));
    const ProxyRate p = l.interval_proxy_rate(1);
    EXPECT_DOUBLE_EQ(p.rate, 1.0 / 3.0);
    EXPECT_EQ(p.validated, 3u);
    EXPECT_EQ(p.mismatched, 1u);
    EXPECT_EQ(l.count_in_interval(1), 3u);
    EXPECT_EQ(l.count_in_interval(2), 0u);
    EXPECT_THROW(l.interval_proxy_rate(2), NoObservations);
}

TEST(Culprit, CountDecidesFirst) {
    CurationLedger l;
    l.append(rec(1, 0, false, kSnow4));
    l.append(rec(1, 1, false, kSnow4));
    l.append(rec(1, 2, false, kFog5));
    l.append(rec(1, 3, true));
    const CulpritReport r = l.culprit_analysis(1);
    EXPECT_EQ(r.dominant_kind, ShiftKind::Snow);
    EXPECT_EQ(r.sample_ids, (std::vector<std::uint64_t>{0, 1}));
    EXPECT_EQ(r.group_counts.at(ShiftKind::Fog), 1u);
    EXPECT_DOUBLE_EQ(r.mean_severity.at(ShiftKind::Snow), 4.0);
}

TEST(Culprit, TieGoesToHigherMeanSeverityThenEarlierKind) {
    CurationLedger a;
    a.append(rec(1, 0, false, kFog4));
    a.append(rec(1, 1, false, kFog4));
    a.append(rec(1, 2, false, kSnow5));
    a.append(rec(1, 3, false, kSnow4));
    EXPECT_EQ(a.culprit_analysis(1).dominant_kind, ShiftKind::Snow);

    CurationLedger b;
    b.append(rec(1, 0, false, kSnow5));
    b.append(rec(1, 1, false, kFog5));
    EXPECT_EQ(b.culprit_analysis(1).dominant_kind, ShiftKind::Fog);
}

TEST(Culprit, RespectsSinceIntervalAndIgnoresUntagged) {
    CurationLedger l;
    l.append(rec(1, 0, false, kFog5));
    l.append(rec(1, 1, false, kFog5));
    l.append(rec(2, 2, false, kSnow5));
    l.append(rec(2, 3, false));
    EXPECT_EQ(l.culprit_analysis(1).dominant_kind, ShiftKind::Fog);
    EXPECT_EQ(l.culprit_analysis(2).dominant_kind, ShiftKind::Snow);
    EXPECT_THROW(l.culprit_analysis(3), NoCulprit);
    CurationLedger untagged;
    untagged.append(rec(1, 0, false));
    EXPECT_THROW(untagged.culprit_analysis(1), NoCulprit);
}

TEST(Culprit, AgreesWithBruteForceOnRandomLedgers) {
    for (std::uint64_t seed = 0; seed < 1000; ++seed) {
        CurationLedger l;
        const auto records = testing::random_ledger(seed);
        for (const auto& r : records) l.append(r);
        const int since = 1 + static_cast<int>(seed % 5);
        bool lib_threw = false, ref_threw = false;
        CulpritReport got, want;
        try {
            got = l.culprit_analysis(since);
        } catch (const NoCulprit&) {
            lib_threw = true;
        }
        try {
            want = testing::brute_force_culprit(records, since);
        } catch (const NoCulprit&) {
            ref_threw = true;
        }
        ASSERT_EQ(lib_threw, ref_threw) << "seed " << seed;
        if (!lib_threw) {
            ASSERT_EQ(got, want) << "seed " << seed;
        }
    }
}

TEST(LedgerCsv, RoundTripAndFormat) {
    CurationLedger l;
    l.append(rec(1, 0, true));
    l.append(rec(2, 5, false, kFog5));
    const std::string csv = l.to_csv();
    EXPECT_EQ(csv, std::string(kLedgerHeader) + "\n1,0,3,3,true,none,0,0\n2,5,4,3,false,fog,5,5\n");
    std::istringstream in(csv);
    EXPECT_EQ(CurationLedger::read_csv(in).records(), l.records());
}

TEST(LedgerCsv, RandomLedgersRoundTripThroughFiles) {
    const auto path = std::filesystem::temp_directory_path() / "saf_ledger_roundtrip.csv";
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        CurationLedger l;
        for (const auto& r : testing::random_ledger(seed)) l.append(r);
        l.export_csv(path);
        EXPECT_EQ(CurationLedger::import_csv(path).records(), l.records());
    }
    std::filesystem::remove(path);
}

std::size_t parse_error_line(const std::string& text) {
    std::istringstream in(text);
    try {
        CurationLedger::read_csv(in);
    } catch (const LedgerParseError& e) {
        return e.line();
    }
    ADD_FAILURE() << "parsed: " << text;
    return 0;
}

TEST(LedgerCsv, ParseErrorsCarryLineNumbers) {
    const std::string h = std::string(kLedgerHeader) + "\n";
    EXPECT_EQ(parse_error_line("interval,item\n"), 1u);
    EXPECT_EQ(parse_error_line(h + "1,0,3,3,true,none,0,0\n1,1,3,3\n"), 3u);
    EXPECT_EQ(parse_error_line(h + "1,0,3,3,yes,none,0,0\n"), 2u);
    EXPECT_EQ(parse_error_line(h + "1,0,4,3,false,hail,5,0\n"), 2u);
    EXPECT_EQ(parse_error_line(h + "1,0,4,3,false,fog,0,0\n"), 2u);
    EXPECT_EQ(parse_error_line(h + "x,0,3,3,true,none,0,0\n"), 2u);
    EXPECT_EQ(parse_error_line(h + "2,0,3,3,true,none,0,0\n1,1,3,3,true,none,0,1\n"), 3u);
    EXPECT_THROW(CurationLedger::import_csv("/nonexistent/ledger.csv"), Error);
}

}  // namespace
}  // namespace saf
