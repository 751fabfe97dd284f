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
#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "saf/shift_forge.hpp"

namespace saf {

struct LedgerRecord {
    int interval = 1;
    std::uint64_t item_id = 0;
    int predicted_label = 0;
    int true_label = 0;
    bool match = true;
    ShiftSpec shift;
    std::uint64_t image_ref = 0;

    friend bool operator==(const LedgerRecord&, const LedgerRecord&) = default;
};

struct ProxyRate {
    double rate = 0.0;
    std::size_t validated = 0;
    std::size_t mismatched = 0;
};

struct CulpritReport {
    ShiftKind dominant_kind = ShiftKind::None;
    std::map<ShiftKind, std::size_t> group_counts;
    std::map<ShiftKind, double> mean_severity;
    std::vector<std::uint64_t> sample_ids;

    friend bool operator==(const CulpritReport&, const CulpritReport&) = default;
};

class NoObservations : public Error {
  public:
    NoObservations() : Error("no observations") {}
};

class NoCulprit : public Error {
  public:
    NoCulprit() : Error("no culprit") {}
};

class LedgerParseError : public Error {
  public:
    LedgerParseError(std::size_t line, const std::string& what)
        : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
    std::size_t line() const { return line_; }

  private:
    std::size_t line_;
};

inline constexpr const char* kLedgerHeader = "interval,item_id,predicted_label,true_label,match,kind,severity,image_ref";

/// Append-only table of validated and relabeled items.
class CurationLedger {
  public:
    /// Throws if record.interval precedes the last appended interval or the
    /// match flag disagrees with the labels.
    void append(const LedgerRecord& record);

    const std::vector<LedgerRecord>& records() const { return records_; }
    std::size_t size() const { return records_.size(); }

    std::size_t count_in_interval(int interval) const;

    /// Mismatch fraction among the interval's records. Throws NoObservations
    /// when the interval has none.
    ProxyRate interval_proxy_rate(int interval) const;

    /// Groups mismatches with interval >= since_interval by shift kind (kind
    /// none excluded). The dominant group has the most mismatches; ties go to
    /// the higher mean severity, then to the earlier kind. Throws NoCulprit
    /// when no tagged mismatch exists.
    CulpritReport culprit_analysis(int since_interval) const;

    /// Columns in kLedgerHeader order; match as "true"/"false", kind as its
    /// lowercase name.
    void write_csv(std::ostream& out) const;
    std::string to_csv() const;
    void export_csv(const std::filesystem::path& path) const;

    static CurationLedger read_csv(std::istream& in);
    static CurationLedger import_csv(const std::filesystem::path& path);

  private:
    std::vector<LedgerRecord> records_;
};

}  // namespace saf
