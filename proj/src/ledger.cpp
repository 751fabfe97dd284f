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
#include "saf/ledger.hpp"

#include <charconv>
#include <fstream>
#include <sstream>
#include <string_view>

namespace saf {

void CurationLedger::append(const LedgerRecord& record) {
    if (!records_.empty() && record.interval < records_.back().interval) {
        throw Error("out-of-order interval: " + std::to_string(record.interval) + " after " +
                    std::to_string(records_.back().interval));
    }
    if (record.match != (record.predicted_label == record.true_label)) {
        throw Error("match flag inconsistent with labels");
    }
    records_.push_back(record);
}

std::size_t CurationLedger::count_in_interval(int interval) const {
    std::size_t n = 0;
    for (const auto& r : records_) {
        n += r.interval == interval ? 1 : 0;
    }
    return n;
}

ProxyRate CurationLedger::interval_proxy_rate(int interval) const {
    ProxyRate p;
    for (const auto& r : records_) {
        if (r.interval != interval) continue;
        ++p.validated;
        p.mismatched += r.match ? 0 : 1;
    }
    if (p.validated == 0) {
        throw NoObservations();
    }
    p.rate = static_cast<double>(p.mismatched) / static_cast<double>(p.validated);
    return p;
}

CulpritReport CurationLedger::culprit_analysis(int since_interval) const {
    CulpritReport report;
    std::map<ShiftKind, double> severity_sum;
    for (const auto& r : records_) {
        if (r.interval < since_interval || r.match || r.shift.kind() == ShiftKind::None) continue;
        ++report.group_counts[r.shift.kind()];
        severity_sum[r.shift.kind()] += r.shift.severity();
    }
    if (report.group_counts.empty()) {
        throw NoCulprit();
    }
    bool first = true;
    std::size_t best_count = 0;
    double best_severity = 0.0;
    // std::map iterates kinds in enum order, so strict comparisons keep the
    // earlier kind on a full tie.
    for (const auto& [kind, count] : report.group_counts) {
        const double mean = severity_sum[kind] / static_cast<double>(count);
        report.mean_severity[kind] = mean;
        if (first || count > best_count || (count == best_count && mean > best_severity)) {
            report.dominant_kind = kind;
            best_count = count;
            best_severity = mean;
            first = false;
        }
    }
    for (const auto& r : records_) {
        if (r.interval >= since_interval && !r.match && r.shift.kind() == report.dominant_kind) {
            report.sample_ids.push_back(r.item_id);
        }
    }
    return report;
}

void CurationLedger::write_csv(std::ostream& out) const {
    out << kLedgerHeader << '\n';
    for (const auto& r : records_) {
        out << r.interval << ',' << r.item_id << ',' << r.predicted_label << ',' << r.true_label << ','
            << (r.match ? "true" : "false") << ',' << to_string(r.shift.kind()) << ',' << r.shift.severity() << ','
            << r.image_ref << '\n';
    }
}

std::string CurationLedger::to_csv() const {
    std::ostringstream os;
    write_csv(os);
    return os.str();
}

void CurationLedger::export_csv(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw Error("cannot open ledger for writing: " + path.string());
    }
    write_csv(out);
}

namespace {

template <typename T>
T parse_number(std::string_view field, std::size_t line, const char* name) {
    T value{};
    const auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), value);
    if (ec != std::errc() || ptr != field.data() + field.size()) {
        throw LedgerParseError(line, std::string("malformed ") + name + " '" + std::string(field) + "'");
    }
    return value;
}

}  // namespace

CurationLedger CurationLedger::read_csv(std::istream& in) {
    CurationLedger ledger;
    std::string line;
    std::size_t line_no = 0;
    if (!std::getline(in, line) || line != kLedgerHeader) {
        throw LedgerParseError(1, "missing or malformed header");
    }
    line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::vector<std::string_view> f;
        std::string_view rest(line);
        while (true) {
            const auto comma = rest.find(',');
            f.push_back(rest.substr(0, comma));
            if (comma == std::string_view::npos) break;
            rest.remove_prefix(comma + 1);
        }
        if (f.size() != 8) {
            throw LedgerParseError(line_no, "expected 8 fields, got " + std::to_string(f.size()));
        }
        LedgerRecord r;
        r.interval = parse_number<int>(f[0], line_no, "interval");
        r.item_id = parse_number<std::uint64_t>(f[1], line_no, "item_id");
        r.predicted_label = parse_number<int>(f[2], line_no, "predicted_label");
        r.true_label = parse_number<int>(f[3], line_no, "true_label");
        if (f[4] == "true") {
            r.match = true;
        } else if (f[4] == "false") {
            r.match = false;
        } else {
            throw LedgerParseError(line_no, "malformed match '" + std::string(f[4]) + "'");
        }
        const int severity = parse_number<int>(f[6], line_no, "severity");
        try {
            r.shift = ShiftSpec(parse_shift_kind(f[5]), severity);
        } catch (const Error& e) {
            throw LedgerParseError(line_no, "malformed kind/severity: " + std::string(e.what()));
        }
        r.image_ref = parse_number<std::uint64_t>(f[7], line_no, "image_ref");
        try {
            ledger.append(r);
        } catch (const Error& e) {
            throw LedgerParseError(line_no, e.what());
        }
    }
    return ledger;
}

CurationLedger CurationLedger::import_csv(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw Error("cannot open ledger: " + path.string());
    }
    return read_csv(in);
}

}  // namespace saf
