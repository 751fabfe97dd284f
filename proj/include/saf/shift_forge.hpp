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

#include <array>
#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "saf/model.hpp"

namespace saf {

inline constexpr int kImageSide = 16;
inline constexpr int kImagePixels = kImageSide * kImageSide;
inline constexpr int kNumClasses = 10;
inline constexpr int kMaxJitter = 2;
inline constexpr double kPixelNoiseSd = 0.05;
inline constexpr int kMaxSeverity = 5;

/// Glyphs are dark strokes on a light background.
inline constexpr double kBackground = 1.0;
inline constexpr double kStroke = 0.0;

/// 16x16 grayscale image, row-major, values in [0,1].
using Image = Vector;

enum class ShiftKind : int { None = 0, Fog, Snow, Frost, Contrast, Brightness };

inline constexpr std::array<ShiftKind, 5> kCorruptionKinds = {ShiftKind::Fog, ShiftKind::Snow, ShiftKind::Frost,
                                                              ShiftKind::Contrast, ShiftKind::Brightness};

std::string_view to_string(ShiftKind kind);
ShiftKind parse_shift_kind(std::string_view text);

/// A (corruption kind, severity) pair. severity is 0 iff kind is None.
class ShiftSpec {
  public:
    ShiftSpec() = default;
    ShiftSpec(ShiftKind kind, int severity);

    static ShiftSpec none() { return {}; }

    ShiftKind kind() const { return kind_; }
    int severity() const { return severity_; }

    friend bool operator==(const ShiftSpec&, const ShiftSpec&) = default;

  private:
    ShiftKind kind_ = ShiftKind::None;
    int severity_ = 0;
};

std::ostream& operator<<(std::ostream& os, const ShiftSpec& s);

/// Strength of each corruption operator per severity step.
struct CorruptionParams {
    double fog_step = 0.16;
    double fog_level = 0.8;
    double brightness_step = 0.10;
    double contrast_step = 0.15;
    double snow_density_step = 0.10;
    double frost_step = 0.12;
};

/// Ground truth carried alongside every stream item. Only the expert
/// oracle and the evaluator read it; the models never see it.
struct Provenance {
    int true_label = 0;
    ShiftSpec shift;
};

struct StreamItem {
    std::uint64_t id = 0;
    int interval = 1;
    Image image;
    Provenance provenance;
};

struct GlyphJitter {
    int dx = 0;
    int dy = 0;
    double noise_sd = kPixelNoiseSd;
    std::uint64_t noise_seed = 0;
};

/// Zero-jitter, noise-free rendering of class `cls`.
const Image& glyph_template(int cls);

/// Template of `cls` translated by (dx, dy); pixels shifted in from the
/// border are background.
Image shifted_template(int cls, int dx, int dy);

Image render_glyph(int cls, const GlyphJitter& jitter);

/// Translation in [-2,2]^2 and N(0, 0.05^2) pixel noise drawn from `jitter_seed`.
Image render_glyph(int cls, std::uint64_t jitter_seed);

LabeledSet gen_base_dataset(std::uint64_t seed, std::size_t n_per_class);

/// Stacks items into a labeled set (labels from provenance).
LabeledSet to_labeled_set(const std::vector<StreamItem>& items);

/// Applies `shift`. Snow pixels and the frost mask are drawn from `noise_seed`.
Image corrupt(const Image& image, const ShiftSpec& shift, std::uint64_t noise_seed,
              const CorruptionParams& params = {});

/// Clean glyphs of uniformly random classes, each corrupted with `shift`.
LabeledSet gen_corrupted_set(std::uint64_t seed, std::size_t n, const ShiftSpec& shift,
                             const CorruptionParams& params = {});

// ---- corruption signature --------------------------------------------------

inline constexpr int kSignatureQuantiles = 16;

/// Per-image description of the corruption applied to it: the residual
/// against the best-aligned clean template, split into stroke and
/// background pixels, each summarized by kSignatureQuantiles sorted
/// quantile values.
using Signature = std::array<double, 2 * kSignatureQuantiles>;

struct TemplateMatch {
    int cls = 0;
    int dx = 0;
    int dy = 0;
    double correlation = 0.0;
};

/// Nearest clean template by Pearson correlation over all classes and
/// translations in [-2,2]^2. Correlation is used so that global intensity
/// changes do not bias the match.
TemplateMatch nearest_template(const Image& image);

Signature corruption_signature(const Image& image);

double signature_distance(const Signature& a, const Signature& b);

struct ExemplarGroup {
    ShiftSpec shift;
    std::vector<Image> images;
    std::vector<Signature> signatures;
};

struct ExemplarBank {
    std::vector<ExemplarGroup> groups;  // 25 groups in (kind, severity) order
    std::vector<Signature> clean_signatures;
    std::size_t per_group = 0;
};

inline constexpr std::size_t kDefaultExemplarsPerGroup = 20;

ExemplarBank build_exemplar_bank(std::uint64_t seed, std::size_t per_group = kDefaultExemplarsPerGroup,
                                 const CorruptionParams& params = {});

// ---- streams ----------------------------------------------------------------

struct StreamConfig {
    std::size_t intervals = 7;
    std::size_t items_per_interval = 240;
    std::vector<ShiftSpec> schedule;  // one entry per interval
    double shift_probability = 1.0;
    CorruptionParams corruption;
};

/// Item ids run 0..N-1. Per-item seeds are derive_seed(seed, id, purpose).
std::vector<StreamItem> gen_stream(const StreamConfig& config, std::uint64_t seed);

/// One line per item: id,interval,kind,severity,true_label,p0..p255 with
/// pixels printed as %.17g. First line is a header.
void write_stream_csv(const std::vector<StreamItem>& items, std::ostream& out);

}  // namespace saf
