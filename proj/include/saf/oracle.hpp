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

#include "saf/ledger.hpp"
#include "saf/shift_forge.hpp"

namespace saf {

enum class OracleMode { Provenance, NearestExemplar };

struct Verdict {
    std::uint64_t item_id = 0;
    bool match = true;
    int predicted_label = 0;
    int true_label = 0;
};

enum class TagMethod { Provenance, NearestExemplar };

struct ShiftTag {
    ShiftSpec shift;
    TagMethod method = TagMethod::Provenance;
};

struct BudgetState {
    std::size_t allocated = 0;
    std::size_t consumed = 0;
};

/// Exemplar bank plus the clean-residual threshold used to decide that a
/// mismatched item carries no corruption at all.
class ExemplarIndex {
  public:
    explicit ExemplarIndex(ExemplarBank bank);

    const ExemplarBank& bank() const { return bank_; }

    /// 95th percentile, over the bank's clean references, of the distance
    /// from each clean signature to its nearest other clean signature.
    double clean_threshold() const { return clean_threshold_; }

    /// Nearest corruption exemplar; (none,0) when the nearest clean reference
    /// lies within clean_threshold() and is closer than every corruption
    /// exemplar. Ties go to the earlier kind, then the lower severity.
    ShiftSpec nearest(const Image& image) const;

  private:
    ExemplarBank bank_;
    double clean_threshold_ = 0.0;
};

/// Simulated reliable expert.
class ExpertOracle {
  public:
    ExpertOracle(OracleMode mode, const ExemplarIndex* index);

    OracleMode mode() const { return mode_; }

    /// Compares the prediction with the hidden true label.
    Verdict validate(const StreamItem& item, int predicted_label) const;

    ShiftTag tag_shift(const StreamItem& item) const;

    struct Outcome {
        Verdict verdict;
        LedgerRecord record;
    };

    /// Charges one budget unit and produces the ledger record: matches are
    /// recorded with tag (none,0), mismatches with the extracted tag.
    /// Throws "budget overrun" when the budget is already exhausted.
    Outcome process_selected(const StreamItem& item, int predicted_label, BudgetState& budget) const;

  private:
    OracleMode mode_;
    const ExemplarIndex* index_;
};

}  // namespace saf
