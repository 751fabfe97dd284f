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

// Shared fixtures and brute-force oracles for the unit and acceptance tests.

#include <algorithm>
#include <cmath>
#include <map>
#include <tuple>
#include <vector>

#include "saf/ledger.hpp"
#include "saf/model.hpp"
#include "saf/report.hpp"
#include "saf/shift_forge.hpp"

namespace saf::testing {

/// Small model with every parameter random, including statistics.
inline ModelParams random_model(const ArchSpec& arch, std::uint64_t seed) {
    ModelParams m = init_model(arch, seed);
    Rng rng(derive_seed(seed, 0, "test-random-model"));
    auto fill = [&](auto& x, double lo, double hi) {
        for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = lo + (hi - lo) * uniform01(rng);
    };
    fill(m.w1, -0.8, 0.8);
    fill(m.b1, -0.3, 0.3);
    fill(m.gamma, 0.5, 1.5);
    fill(m.beta, -0.3, 0.3);
    fill(m.running_mean, -0.5, 0.5);
    fill(m.running_var, 0.5, 2.0);
    fill(m.w2, -0.8, 0.8);
    fill(m.b2, -0.3, 0.3);
    return m;
}

inline Matrix random_batch(std::size_t rows, std::size_t cols, std::uint64_t seed) {
    Rng rng(derive_seed(seed, 0, "test-random-batch"));
    Matrix b(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    for (Eigen::Index i = 0; i < b.size(); ++i) b.data()[i] = uniform01(rng);
    return b;
}

inline double loss_of(const ModelParams& m, const Matrix& batch, NormMode mode, const LossKind& loss) {
    const BatchPredictions p = forward(m, batch, mode);
    return loss.is_cross_entropy ? cross_entropy_loss(p, loss.labels) : entropy_loss(p);
}

/// Relative error used by the finite-difference oracle. The denominator is
/// floored so that entries whose true gradient is ~0 are judged on their
/// absolute error.
inline double relative_error(double analytic, double numeric) {
    return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-6});
}

/// Largest relative error between `backward` and central differences with
/// step h over every in-scope parameter entry.
inline double max_fd_error(const ModelParams& model, const Matrix& batch, NormMode mode, const LossKind& loss,
                           GradScope scope, double h = 1e-5) {
    const Gradients g = backward(model, batch, mode, loss, scope);
    double worst = 0.0;
    auto check = [&](auto member, const auto& analytic) {
        ModelParams m = model;
        auto& p = m.*member;
        for (Eigen::Index i = 0; i < p.size(); ++i) {
            const double orig = p.data()[i];
            p.data()[i] = orig + h;
            const double up = loss_of(m, batch, mode, loss);
            p.data()[i] = orig - h;
            const double down = loss_of(m, batch, mode, loss);
            p.data()[i] = orig;
            worst = std::max(worst, relative_error(analytic.data()[i], (up - down) / (2.0 * h)));
        }
    };
    check(&ModelParams::gamma, g.gamma);
    check(&ModelParams::beta, g.beta);
    if (scope == GradScope::AllWeightsAndAffine) {
        check(&ModelParams::w1, *g.w1);
        check(&ModelParams::b1, *g.b1);
        check(&ModelParams::w2, *g.w2);
        check(&ModelParams::b2, *g.b2);
    }
    return worst;
}

/// Independent group-by/argmax: most mismatches, then higher mean severity
/// (compared exactly by cross-multiplication), then earlier kind.
inline CulpritReport brute_force_culprit(const std::vector<LedgerRecord>& records, int since) {
    std::map<ShiftKind, std::pair<std::size_t, long>> groups;  // count, severity sum
    for (const auto& r : records) {
        if (r.interval >= since && !r.match && r.shift.kind() != ShiftKind::None) {
            auto& g = groups[r.shift.kind()];
            g.first += 1;
            g.second += r.shift.severity();
        }
    }
    if (groups.empty()) throw NoCulprit();
    ShiftKind best = ShiftKind::None;
    for (const auto& [kind, g] : groups) {
        if (best == ShiftKind::None) {
            best = kind;
            continue;
        }
        const auto& b = groups[best];
        const auto lhs = static_cast<long>(g.second) * static_cast<long>(b.first);
        const auto rhs = static_cast<long>(b.second) * static_cast<long>(g.first);
        const bool better = g.first > b.first || (g.first == b.first && lhs > rhs) ||
                            (g.first == b.first && lhs == rhs && static_cast<int>(kind) < static_cast<int>(best));
        if (better) best = kind;
    }
    CulpritReport rep;
    rep.dominant_kind = best;
    for (const auto& [kind, g] : groups) {
        rep.group_counts[kind] = g.first;
        rep.mean_severity[kind] = static_cast<double>(g.second) / static_cast<double>(g.first);
    }
    for (const auto& r : records) {
        if (r.interval >= since && !r.match && r.shift.kind() == best) rep.sample_ids.push_back(r.item_id);
    }
    return rep;
}

/// Random consistent ledger; small kind and severity ranges make ties common.
inline std::vector<LedgerRecord> random_ledger(std::uint64_t seed, int intervals = 5) {
    Rng rng(derive_seed(seed, 0, "test-ledger"));
    std::vector<LedgerRecord> out;
    std::uint64_t id = 0;
    const int kinds = uniform_int(rng, 1, 5);
    for (int k = 1; k <= intervals; ++k) {
        const int n = uniform_int(rng, 0, 8);
        for (int i = 0; i < n; ++i) {
            LedgerRecord r;
            r.interval = k;
            r.item_id = id;
            r.image_ref = id;
            ++id;
            r.true_label = uniform_int(rng, 0, 9);
            r.match = uniform01(rng) < 0.4;
            r.predicted_label = r.match ? r.true_label : (r.true_label + uniform_int(rng, 1, 9)) % 10;
            if (!r.match && uniform01(rng) < 0.9) {
                r.shift = ShiftSpec(static_cast<ShiftKind>(uniform_int(rng, 1, kinds)), uniform_int(rng, 4, 5));
            }
            out.push_back(r);
        }
    }
    return out;
}

/// Quickly trained default-architecture model for tests that need a
/// classifier better than chance but not the full training run.
inline const ModelParams& quick_model() {
    static const ModelParams model = [] {
        TrainSettings s;
        s.n_per_class = 60;
        s.epochs = 8;
        s.heldout_size = 10;
        return train_base_model(s).model;
    }();
    return model;
}

}  // namespace saf::testing
