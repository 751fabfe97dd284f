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
#include "saf/shift_forge.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <ostream>

namespace saf {

namespace {

// Per-class stroke patterns, 12 rows x 10 columns, placed at rows 2..13 and
// columns 3..12 of the 16x16 grid so any jitter in [-2,2]^2 stays inside.
constexpr int kPatternRows = 12;
constexpr int kPatternCols = 10;
constexpr int kPatternTop = 2;
constexpr int kPatternLeft = 3;

constexpr std::array<std::array<const char*, kPatternRows>, kNumClasses> kPatterns = {{
    {"..######..", ".########.", "##......##", "##......##", "##......##", "##......##",
     "##......##", "##......##", "##......##", "##......##", ".########.", "..######.."},
    {"....##....", "...###....", "..####....", "....##....", "....##....", "....##....",
     "....##....", "....##....", "....##....", "....##....", "..######..", "..######.."},
    {".#######..", "#########.", ".......##.", ".......##.", "......##..", "....###...",
     "...##.....", "..##......", ".##.......", "##........", "##########", "##########"},
    {"#########.", "##########", "........##", "........##", "...#######", "...#######",
     "........##", "........##", "........##", "........##", "##########", "#########."},
    {"##......##", "##......##", "##......##", "##......##", "##......##", "##########",
     "##########", "........##", "........##", "........##", "........##", "........##"},
    {"##########", "##########", "##........", "##........", "#########.", "##########",
     "........##", "........##", "........##", "........##", "##########", "#########."},
    {".#########", "##########", "##........", "##........", "#########.", "##########",
     "##......##", "##......##", "##......##", "##......##", "##########", ".########."},
    {"##########", "##########", "........##", ".......##.", "......##..", ".....##...",
     "....##....", "....##....", "....##....", "....##....", "....##....", "....##...."},
    {".########.", "##########", "##......##", "##......##", ".########.", ".########.",
     "##......##", "##......##", "##......##", "##......##", "##########", ".########."},
    {".########.", "##########", "##......##", "##......##", "##......##", "##########",
     ".#########", "........##", "........##", "........##", "##########", "#########."},
}};

std::array<Image, kNumClasses> build_templates() {
    std::array<Image, kNumClasses> out;
    for (int c = 0; c < kNumClasses; ++c) {
        Image img = Image::Constant(kImagePixels, kBackground);
        for (int r = 0; r < kPatternRows; ++r) {
            const char* row = kPatterns[static_cast<std::size_t>(c)][static_cast<std::size_t>(r)];
            for (int k = 0; k < kPatternCols; ++k) {
                if (row[k] == '#') {
                    img((kPatternTop + r) * kImageSide + kPatternLeft + k) = kStroke;
                }
            }
        }
        out[static_cast<std::size_t>(c)] = std::move(img);
    }
    return out;
}

void check_class(int cls) {
    if (cls < 0 || cls >= kNumClasses) {
        throw Error("class out of range");
    }
}

Image clamp01(Image img) { return img.cwiseMax(0.0).cwiseMin(1.0); }

}  // namespace

std::string_view to_string(ShiftKind kind) {
    switch (kind) {
        case ShiftKind::None: return "none";
        case ShiftKind::Fog: return "fog";
        case ShiftKind::Snow: return "snow";
        case ShiftKind::Frost: return "frost";
        case ShiftKind::Contrast: return "contrast";
        case ShiftKind::Brightness: return "brightness";
    }
    return "none";
}

ShiftKind parse_shift_kind(std::string_view text) {
    for (ShiftKind k : {ShiftKind::None, ShiftKind::Fog, ShiftKind::Snow, ShiftKind::Frost, ShiftKind::Contrast,
                        ShiftKind::Brightness}) {
        if (text == to_string(k)) {
            return k;
        }
    }
    throw Error("unknown shift kind '" + std::string(text) + "'");
}

ShiftSpec::ShiftSpec(ShiftKind kind, int severity) : kind_(kind), severity_(severity) {
    if (severity < 0 || severity > kMaxSeverity) {
        throw Error("severity out of range");
    }
    if ((kind == ShiftKind::None) != (severity == 0)) {
        throw Error("severity must be 0 exactly when kind is none");
    }
}

std::ostream& operator<<(std::ostream& os, const ShiftSpec& s) {
    return os << '(' << to_string(s.kind()) << ',' << s.severity() << ')';
}

const Image& glyph_template(int cls) {
    static const std::array<Image, kNumClasses> templates = build_templates();
    check_class(cls);
    return templates[static_cast<std::size_t>(cls)];
}

Image shifted_template(int cls, int dx, int dy) {
    const Image& base = glyph_template(cls);
    Image out = Image::Constant(kImagePixels, kBackground);
    for (int r = 0; r < kImageSide; ++r) {
        const int sr = r - dy;
        if (sr < 0 || sr >= kImageSide) continue;
        for (int c = 0; c < kImageSide; ++c) {
            const int sc = c - dx;
            if (sc < 0 || sc >= kImageSide) continue;
            out(r * kImageSide + c) = base(sr * kImageSide + sc);
        }
    }
    return out;
}

Image render_glyph(int cls, const GlyphJitter& jitter) {
    Image img = shifted_template(cls, jitter.dx, jitter.dy);
    if (jitter.noise_sd > 0.0) {
        Rng rng(jitter.noise_seed);
        for (Eigen::Index i = 0; i < img.size(); ++i) {
            img(i) += jitter.noise_sd * standard_normal(rng);
        }
    }
    return clamp01(std::move(img));
}

Image render_glyph(int cls, std::uint64_t jitter_seed) {
    check_class(cls);
    Rng rng(jitter_seed);
    GlyphJitter j;
    j.dx = uniform_int(rng, -kMaxJitter, kMaxJitter);
    j.dy = uniform_int(rng, -kMaxJitter, kMaxJitter);
    j.noise_sd = kPixelNoiseSd;
    j.noise_seed = rng();
    return render_glyph(cls, j);
}

LabeledSet gen_base_dataset(std::uint64_t seed, std::size_t n_per_class) {
    if (n_per_class == 0) {
        throw Error("n_per_class must be >= 1");
    }
    const std::size_t n = n_per_class * kNumClasses;
    LabeledSet set;
    set.images.resize(static_cast<Eigen::Index>(n), kImagePixels);
    set.labels.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const int cls = static_cast<int>(i / n_per_class);
        set.images.row(static_cast<Eigen::Index>(i)) = render_glyph(cls, derive_seed(seed, i, "base-glyph")).transpose();
        set.labels[i] = cls;
    }
    return set;
}

LabeledSet to_labeled_set(const std::vector<StreamItem>& items) {
    LabeledSet set;
    set.images.resize(static_cast<Eigen::Index>(items.size()), kImagePixels);
    set.labels.reserve(items.size());
    for (std::size_t i = 0; i < items.size(); ++i) {
        set.images.row(static_cast<Eigen::Index>(i)) = items[i].image.transpose();
        set.labels.push_back(items[i].provenance.true_label);
    }
    return set;
}

Image corrupt(const Image& image, const ShiftSpec& shift, std::uint64_t noise_seed, const CorruptionParams& p) {
    const double s = shift.severity();
    Rng rng(noise_seed);
    switch (shift.kind()) {
        case ShiftKind::None:
            return image;
        case ShiftKind::Fog: {
            const double a = std::min(1.0, p.fog_step * s);
            return clamp01(((1.0 - a) * image.array() + a * p.fog_level).matrix());
        }
        case ShiftKind::Brightness:
            return clamp01(image.array() + p.brightness_step * s);
        case ShiftKind::Contrast: {
            const double k = 1.0 - p.contrast_step * s;
            return clamp01(((image.array() - 0.5) * k + 0.5).matrix());
        }
        case ShiftKind::Snow: {
            const auto count = static_cast<int>(std::lround(std::min(1.0, p.snow_density_step * s) * kImagePixels));
            std::array<int, kImagePixels> idx;
            std::iota(idx.begin(), idx.end(), 0);
            Image out = image;
            for (int i = 0; i < count; ++i) {
                const int j = uniform_int(rng, i, kImagePixels - 1);
                std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(j)]);
                out(idx[static_cast<std::size_t>(i)]) = 1.0;
            }
            return out;
        }
        case ShiftKind::Frost: {
            const double k = p.frost_step * s;
            Image out(kImagePixels);
            for (int i = 0; i < kImagePixels; ++i) {
                out(i) = image(i) * (1.0 - k * uniform01(rng));
            }
            return clamp01(std::move(out));
        }
    }
    return image;
}

LabeledSet gen_corrupted_set(std::uint64_t seed, std::size_t n, const ShiftSpec& shift, const CorruptionParams& p) {
    LabeledSet set;
    set.images.resize(static_cast<Eigen::Index>(n), kImagePixels);
    set.labels.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        Rng rng(derive_seed(seed, i, "set-class"));
        const int cls = uniform_int(rng, 0, kNumClasses - 1);
        const Image clean = render_glyph(cls, derive_seed(seed, i, "set-glyph"));
        set.images.row(static_cast<Eigen::Index>(i)) =
            corrupt(clean, shift, derive_seed(seed, i, "set-corrupt"), p).transpose();
        set.labels[i] = cls;
    }
    return set;
}

// ---- signatures -------------------------------------------------------------

TemplateMatch nearest_template(const Image& image) {
    const double mean = image.mean();
    const Image centered = image.array() - mean;
    const double norm = centered.norm();
    TemplateMatch best;
    best.correlation = -2.0;
    for (int cls = 0; cls < kNumClasses; ++cls) {
        for (int dy = -kMaxJitter; dy <= kMaxJitter; ++dy) {
            for (int dx = -kMaxJitter; dx <= kMaxJitter; ++dx) {
                const Image t = shifted_template(cls, dx, dy);
                const Image tc = t.array() - t.mean();
                const double denom = norm * tc.norm();
                const double corr = denom > 0.0 ? centered.dot(tc) / denom : 0.0;
                if (corr > best.correlation) {
                    best = {cls, dx, dy, corr};
                }
            }
        }
    }
    return best;
}

Signature corruption_signature(const Image& image) {
    const TemplateMatch match = nearest_template(image);
    const Image t = shifted_template(match.cls, match.dx, match.dy);
    std::vector<double> stroke;
    std::vector<double> background;
    for (int i = 0; i < kImagePixels; ++i) {
        const double r = image(i) - t(i);
        (t(i) < 0.5 ? stroke : background).push_back(r);
    }
    Signature sig{};
    auto summarize = [&sig](std::vector<double>& values, std::size_t offset) {
        if (values.empty()) {
            return;
        }
        std::sort(values.begin(), values.end());
        for (int q = 0; q < kSignatureQuantiles; ++q) {
            const double pos = (q + 0.5) / kSignatureQuantiles * static_cast<double>(values.size());
            const auto k = std::min(values.size() - 1, static_cast<std::size_t>(pos));
            sig[offset + static_cast<std::size_t>(q)] = values[k];
        }
    };
    summarize(stroke, 0);
    summarize(background, kSignatureQuantiles);
    return sig;
}

double signature_distance(const Signature& a, const Signature& b) {
    double total = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        total += d * d;
    }
    return total / static_cast<double>(a.size());
}

ExemplarBank build_exemplar_bank(std::uint64_t seed, std::size_t per_group, const CorruptionParams& params) {
    ExemplarBank bank;
    bank.per_group = per_group;
    std::uint64_t counter = 0;
    auto fresh_glyph = [&](std::uint64_t index) {
        Rng rng(derive_seed(seed, index, "bank-class"));
        const int cls = uniform_int(rng, 0, kNumClasses - 1);
        return render_glyph(cls, derive_seed(seed, index, "bank-glyph"));
    };
    for (ShiftKind kind : kCorruptionKinds) {
        for (int sev = 1; sev <= kMaxSeverity; ++sev) {
            ExemplarGroup g;
            g.shift = ShiftSpec(kind, sev);
            for (std::size_t i = 0; i < per_group; ++i, ++counter) {
                Image img = corrupt(fresh_glyph(counter), g.shift, derive_seed(seed, counter, "bank-corrupt"), params);
                g.signatures.push_back(corruption_signature(img));
                g.images.push_back(std::move(img));
            }
            bank.groups.push_back(std::move(g));
        }
    }
    for (std::size_t i = 0; i < per_group; ++i, ++counter) {
        bank.clean_signatures.push_back(corruption_signature(fresh_glyph(counter)));
    }
    return bank;
}

// ---- streams ----------------------------------------------------------------

std::vector<StreamItem> gen_stream(const StreamConfig& config, std::uint64_t seed) {
    if (config.schedule.size() != config.intervals) {
        throw Error("schedule length must equal the interval count");
    }
    if (config.items_per_interval == 0) {
        throw Error("items_per_interval must be >= 1");
    }
    std::vector<StreamItem> items;
    items.reserve(config.intervals * config.items_per_interval);
    std::uint64_t id = 0;
    for (std::size_t k = 0; k < config.intervals; ++k) {
        const ShiftSpec& scheduled = config.schedule[k];
        for (std::size_t j = 0; j < config.items_per_interval; ++j, ++id) {
            Rng rng(derive_seed(seed, id, "stream-item"));
            StreamItem item;
            item.id = id;
            item.interval = static_cast<int>(k + 1);
            item.provenance.true_label = uniform_int(rng, 0, kNumClasses - 1);
            const bool shifted = config.shift_probability >= 1.0 || uniform01(rng) < config.shift_probability;
            item.provenance.shift = shifted ? scheduled : ShiftSpec::none();
            const Image clean = render_glyph(item.provenance.true_label, derive_seed(seed, id, "stream-glyph"));
            item.image = corrupt(clean, item.provenance.shift, derive_seed(seed, id, "stream-corrupt"), config.corruption);
            items.push_back(std::move(item));
        }
    }
    return items;
}

void write_stream_csv(const std::vector<StreamItem>& items, std::ostream& out) {
    out << "id,interval,kind,severity,true_label";
    for (int i = 0; i < kImagePixels; ++i) {
        out << ",p" << i;
    }
    out << '\n';
    char buf[32];
    for (const StreamItem& item : items) {
        out << item.id << ',' << item.interval << ',' << to_string(item.provenance.shift.kind()) << ','
            << item.provenance.shift.severity() << ',' << item.provenance.true_label;
        for (int i = 0; i < kImagePixels; ++i) {
            std::snprintf(buf, sizeof(buf), ",%.17g", item.image(i));
            out << buf;
        }
        out << '\n';
    }
}

}  // namespace saf
