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
#include "saf/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

namespace saf {

ExemplarIndex::ExemplarIndex(ExemplarBank bank) : bank_(std::move(bank)) {
    const auto& clean = bank_.clean_signatures;
    if (clean.size() < 2) {
        throw Error("exemplar bank needs at least two clean references");
    }
    std::vector<double> nearest;
    for (std::size_t i = 0; i < clean.size(); ++i) {
        double best = std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < clean.size(); ++j) {
            if (i != j) best = std::min(best, signature_distance(clean[i], clean[j]));
        }
        nearest.push_back(best);
    }
    std::sort(nearest.begin(), nearest.end());
    const auto rank = static_cast<std::size_t>(std::ceil(0.95 * static_cast<double>(nearest.size())));
    clean_threshold_ = nearest[std::max<std::size_t>(rank, 1) - 1];
}

ShiftSpec ExemplarIndex::nearest(const Image& image) const {
    const Signature sig = corruption_signature(image);
    double best = std::numeric_limits<double>::infinity();
    ShiftSpec best_shift;
    for (const ExemplarGroup& g : bank_.groups) {
        for (const Signature& s : g.signatures) {
            const double d = signature_distance(sig, s);
            if (d < best) {  // groups are visited in (kind, severity) order
                best = d;
                best_shift = g.shift;
            }
        }
    }
    double clean_best = std::numeric_limits<double>::infinity();
    for (const Signature& s : bank_.clean_signatures) {
        clean_best = std::min(clean_best, signature_distance(sig, s));
    }
    if (clean_best <= clean_threshold_ && clean_best < best) {
        return ShiftSpec::none();
    }
    return best_shift;
}

ExpertOracle::ExpertOracle(OracleMode mode, const ExemplarIndex* index) : mode_(mode), index_(index) {
    if (mode == OracleMode::NearestExemplar && index == nullptr) {
        throw Error("nearest-exemplar oracle requires an exemplar index");
    }
}

Verdict ExpertOracle::validate(const StreamItem& item, int predicted_label) const {
    return {item.id, predicted_label == item.provenance.true_label, predicted_label, item.provenance.true_label};
}

ShiftTag ExpertOracle::tag_shift(const StreamItem& item) const {
    if (mode_ == OracleMode::Provenance) {
        return {item.provenance.shift, TagMethod::Provenance};
    }
    return {index_->nearest(item.image), TagMethod::NearestExemplar};
}

ExpertOracle::Outcome ExpertOracle::process_selected(const StreamItem& item, int predicted_label,
                                                     BudgetState& budget) const {
    if (budget.consumed >= budget.allocated) {
        throw Error("budget overrun");
    }
    ++budget.consumed;
    Outcome out;
    out.verdict = validate(item, predicted_label);
    out.record.interval = item.interval;
    out.record.item_id = item.id;
    out.record.predicted_label = predicted_label;
    out.record.true_label = item.provenance.true_label;
    out.record.match = out.verdict.match;
    out.record.shift = out.verdict.match ? ShiftSpec::none() : tag_shift(item).shift;
    out.record.image_ref = item.id;
    return out;
}

}  // namespace saf
