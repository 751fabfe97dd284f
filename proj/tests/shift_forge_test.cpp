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

#include <cmath>
#include <set>
#include <sstream>

#include "saf/scenario.hpp"

namespace saf {
namespace {

bool in_unit_range(const Image& img) { return (img.array() >= 0.0).all() && (img.array() <= 1.0).all(); }

std::size_t count_ones(const Image& img) { return static_cast<std::size_t>((img.array() == 1.0).count()); }

TEST(ShiftSpec, ValidatesKindSeverityPairing) {
    EXPECT_NO_THROW(ShiftSpec(ShiftKind::Fog, 1));
    EXPECT_NO_THROW(ShiftSpec(ShiftKind::None, 0));
    EXPECT_THROW(ShiftSpec(ShiftKind::None, 1), Error);
    EXPECT_THROW(ShiftSpec(ShiftKind::Fog, 0), Error);
    EXPECT_THROW(ShiftSpec(ShiftKind::Snow, 6), Error);
    EXPECT_THROW(ShiftSpec(ShiftKind::Snow, -1), Error);
}

TEST(ShiftKind, NamesRoundTrip) {
    for (ShiftKind k : {ShiftKind::None, ShiftKind::Fog, ShiftKind::Snow, ShiftKind::Frost, ShiftKind::Contrast,
                        ShiftKind::Brightness}) {
        EXPECT_EQ(parse_shift_kind(to_string(k)), k);
    }
    EXPECT_THROW(parse_shift_kind("hail"), Error);
}

TEST(RenderGlyph, DeterministicPerClassAndSeed) {
    for (int c = 0; c < kNumClasses; ++c) {
        EXPECT_EQ(render_glyph(c, 1234), render_glyph(c, 1234));
        EXPECT_TRUE(in_unit_range(render_glyph(c, 99)));
    }
    EXPECT_THROW(render_glyph(10, 1), Error);
    EXPECT_THROW(render_glyph(-1, 1), Error);
}

TEST(RenderGlyph, ZeroJitterEqualsTemplate) {
    for (int c = 0; c < kNumClasses; ++c) {
        GlyphJitter j;
        j.noise_sd = 0.0;
        EXPECT_EQ(render_glyph(c, j), glyph_template(c));
        EXPECT_EQ(shifted_template(c, 0, 0), glyph_template(c));
    }
}

TEST(RenderGlyph, TemplatesAreDistinct) {
    for (int a = 0; a < kNumClasses; ++a) {
        for (int b = a + 1; b < kNumClasses; ++b) EXPECT_NE(glyph_template(a), glyph_template(b));
    }
}

TEST(RenderGlyph, NearestTemplateClassifiesJitteredGlyphs) {
    int correct = 0;
    for (int i = 0; i < 1000; ++i) {
        const int cls = i % kNumClasses;
        correct += nearest_template(render_glyph(cls, derive_seed(3, static_cast<std::uint64_t>(i), "t"))).cls == cls;
    }
    EXPECT_GE(correct / 1000.0, 0.95);
}

TEST(BaseDataset, BalancedAndDeterministic) {
    const LabeledSet a = gen_base_dataset(1, 500);
    ASSERT_EQ(a.size(), 5000u);
    std::array<int, kNumClasses> per{};
    for (int l : a.labels) ++per[static_cast<std::size_t>(l)];
    for (int n : per) EXPECT_EQ(n, 500);
    const LabeledSet b = gen_base_dataset(1, 500);
    EXPECT_EQ(a.images, b.images);
    EXPECT_THROW(gen_base_dataset(1, 0), Error);
}

TEST(BaseDataset, DisjointSeedsShareNoImages) {
    const LabeledSet a = gen_base_dataset(1, 40);
    const LabeledSet b = gen_base_dataset(2, 40);
    for (Eigen::Index i = 0; i < a.images.rows(); ++i) {
        for (Eigen::Index j = 0; j < b.images.rows(); ++j) {
            ASSERT_FALSE(a.images.row(i) == b.images.row(j)) << i << " " << j;
        }
    }
}

TEST(Corrupt, NoneIsIdentity) {
    const Image g = render_glyph(4, 8);
    EXPECT_EQ(corrupt(g, ShiftSpec::none(), 1), g);
}

TEST(Corrupt, BrightnessOnBlackImage) {
    const Image out = corrupt(Image::Zero(kImagePixels), ShiftSpec(ShiftKind::Brightness, 5), 1);
    EXPECT_TRUE((out.array() == 0.5).all());
}

TEST(Corrupt, ClosedFormOperators) {
    const CorruptionParams p;
    const Image g = render_glyph(2, 17);
    for (int s = 1; s <= kMaxSeverity; ++s) {
        const Image fog = corrupt(g, ShiftSpec(ShiftKind::Fog, s), 1, p);
        const double a = p.fog_step * s;
        EXPECT_TRUE(fog.isApprox(((1 - a) * g.array() + a * p.fog_level).matrix(), 1e-15));
        const Image con = corrupt(g, ShiftSpec(ShiftKind::Contrast, s), 1, p);
        const Image want = ((g.array() - 0.5) * (1 - p.contrast_step * s) + 0.5).cwiseMax(0.0).cwiseMin(1.0);
        EXPECT_TRUE(con.isApprox(want, 1e-15));
    }
}

TEST(Corrupt, SnowSetsExactPixelCount) {
    const CorruptionParams p;
    for (int s = 1; s <= kMaxSeverity; ++s) {
        const Image out = corrupt(Image::Zero(kImagePixels), ShiftSpec(ShiftKind::Snow, s), 40 + s, p);
        EXPECT_EQ(count_ones(out),
                  static_cast<std::size_t>(std::lround(p.snow_density_step * s * kImagePixels)));
        EXPECT_EQ((out.array() == 0.0).count() + static_cast<Eigen::Index>(count_ones(out)), kImagePixels);
    }
}

TEST(Corrupt, FrostOnlyDarkensWithinBound) {
    const CorruptionParams p;
    const Image g = render_glyph(7, 3);
    for (int s = 1; s <= kMaxSeverity; ++s) {
        const Image out = corrupt(g, ShiftSpec(ShiftKind::Frost, s), 9, p);
        EXPECT_TRUE((out.array() <= g.array()).all());
        EXPECT_TRUE((out.array() >= g.array() * (1.0 - p.frost_step * s) - 1e-15).all());
    }
}

TEST(Corrupt, PureAndInRangeForEveryShift) {
    const Image g = render_glyph(1, 5);
    for (ShiftKind k : kCorruptionKinds) {
        for (int s = 1; s <= kMaxSeverity; ++s) {
            const ShiftSpec sh(k, s);
            const Image a = corrupt(g, sh, 77);
            EXPECT_EQ(a, corrupt(g, sh, 77));
            EXPECT_TRUE(in_unit_range(a));
        }
    }
}

TEST(ExemplarBank, CompleteAndDeterministic) {
    const ExemplarBank a = build_exemplar_bank(5, 20);
    ASSERT_EQ(a.groups.size(), 25u);
    std::set<std::pair<int, int>> seen;
    for (const auto& g : a.groups) {
        EXPECT_EQ(g.images.size(), 20u);
        EXPECT_EQ(g.signatures.size(), 20u);
        EXPECT_NE(g.shift.kind(), ShiftKind::None);
        seen.insert({static_cast<int>(g.shift.kind()), g.shift.severity()});
    }
    EXPECT_EQ(seen.size(), 25u);
    const ExemplarBank b = build_exemplar_bank(5, 20);
    for (std::size_t i = 0; i < a.groups.size(); ++i) EXPECT_EQ(a.groups[i].signatures, b.groups[i].signatures);
}

TEST(Stream, ScenarioTwoLayout) {
    const ScenarioSpec spec = scenario_2();
    const auto items = gen_stream(spec.stream, 11);
    ASSERT_EQ(items.size(), 1680u);
    for (std::size_t i = 0; i < items.size(); ++i) {
        EXPECT_EQ(items[i].id, i);
        EXPECT_EQ(items[i].interval, static_cast<int>(i / 240 + 1));
        EXPECT_TRUE(in_unit_range(items[i].image));
        EXPECT_EQ(items[i].provenance.shift, spec.stream.schedule[i / 240]);
    }
    for (std::size_t i = 240; i < 720; ++i) EXPECT_EQ(items[i].provenance.shift, ShiftSpec(ShiftKind::Fog, 5));
}

TEST(Stream, ScenarioOneIsClean) {
    for (const auto& item : gen_stream(scenario_1().stream, 3)) {
        EXPECT_EQ(item.provenance.shift, ShiftSpec::none());
    }
}

TEST(Stream, DeterministicPerSeedAndDisjointAcrossSeeds) {
    const StreamConfig cfg = scenario_1().stream;
    const auto a = gen_stream(cfg, 21);
    const auto b = gen_stream(cfg, 21);
    const auto c = gen_stream(cfg, 22);
    std::set<std::vector<double>> images;
    for (std::size_t i = 0; i < a.size(); ++i) {
        EXPECT_EQ(a[i].image, b[i].image);
        EXPECT_EQ(a[i].provenance.true_label, b[i].provenance.true_label);
        images.insert(std::vector<double>(a[i].image.data(), a[i].image.data() + a[i].image.size()));
    }
    for (const auto& item : c) {
        EXPECT_EQ(images.count(std::vector<double>(item.image.data(), item.image.data() + item.image.size())), 0u);
    }
}

TEST(Stream, ShiftProbabilityMixesCleanItems) {
    StreamConfig cfg = scenario_2().stream;
    cfg.shift_probability = 0.5;
    std::size_t shifted = 0, eligible = 0;
    for (const auto& item : gen_stream(cfg, 5)) {
        if (cfg.schedule[static_cast<std::size_t>(item.interval - 1)].kind() == ShiftKind::None) continue;
        ++eligible;
        shifted += item.provenance.shift.kind() != ShiftKind::None;
    }
    EXPECT_NEAR(static_cast<double>(shifted) / static_cast<double>(eligible), 0.5, 0.05);
}

TEST(Stream, RejectsBadConfig) {
    StreamConfig cfg = scenario_2().stream;
    cfg.schedule.pop_back();
    EXPECT_THROW(gen_stream(cfg, 1), Error);
}

TEST(Stream, CsvDumpFormat) {
    StreamConfig cfg = scenario_2().stream;
    cfg.items_per_interval = 2;
    const auto items = gen_stream(cfg, 4);
    std::ostringstream os;
    write_stream_csv(items, os);
    std::istringstream in(os.str());
    std::string line;
    std::getline(in, line);
    EXPECT_EQ(line.rfind("id,interval,kind,severity,true_label,p0,p1,", 0), 0u);
    EXPECT_EQ(std::count(line.begin(), line.end(), ','), 260);
    std::size_t rows = 0;
    while (std::getline(in, line)) {
        EXPECT_EQ(std::count(line.begin(), line.end(), ','), 260);
        ++rows;
    }
    EXPECT_EQ(rows, 14u);
    EXPECT_NE(os.str().find("\n2,2,fog,5,"), std::string::npos);
}

}  // namespace
}  // namespace saf
