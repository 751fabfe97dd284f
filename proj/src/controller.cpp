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
#include "saf/controller.hpp"

#include <algorithm>
#include <cmath>

namespace saf {

void ControllerConfig::validate() const {
    if (!(theta > 0.0 && theta < 1.0)) {
        throw Error("theta must be in (0,1)");
    }
    if (!(finetune_lr > 0.0)) {
        throw Error("finetune_lr must be > 0");
    }
    if (finetune_batch < 2) {
        throw Error("finetune_batch must be >= 2");
    }
    if (!(mix_clean_fraction >= 0.0 && mix_clean_fraction < 1.0)) {
        throw Error("mix_clean_fraction must be in [0,1)");
    }
}

Decision end_of_interval(const CurationLedger& ledger, int interval, int since_interval,
                         const ControllerConfig& config) {
    Decision d;
    try {
        d.proxy = ledger.interval_proxy_rate(interval);
    } catch (const NoObservations&) {
        d.reason = "no observations";
        return d;
    }
    if (d.proxy->rate <= config.theta) {
        d.reason = "below threshold";
        return d;
    }
    try {
        d.culprit = ledger.culprit_analysis(since_interval);
    } catch (const NoCulprit&) {
        d.reason = "no culprit";
        return d;
    }
    d.action = Decision::Action::FineTune;
    return d;
}

FineTuneResult fine_tune(const ModelParams& model, const CulpritReport& culprit, const RelabeledStore& store,
                         const LabeledSet& clean_reserve, const ControllerConfig& config, std::uint64_t seed) {
    config.validate();
    if (culprit.sample_ids.empty()) {
        throw Error("culprit has no samples");
    }
    const std::size_t n_cul = culprit.sample_ids.size();
    const std::size_t cols = model.arch.input_dim();
    Matrix culprit_images(static_cast<Eigen::Index>(n_cul), static_cast<Eigen::Index>(cols));
    std::vector<int> culprit_labels;
    for (std::size_t i = 0; i < n_cul; ++i) {
        const auto it = store.find(culprit.sample_ids[i]);
        if (it == store.end()) {
            throw Error("unresolvable sample id " + std::to_string(culprit.sample_ids[i]));
        }
        culprit_images.row(static_cast<Eigen::Index>(i)) = it->second.image.transpose();
        culprit_labels.push_back(it->second.label);
    }

    const std::size_t reserve = clean_reserve.size();
    const auto clean_per_batch = reserve == 0 ? std::size_t{0}
                                              : static_cast<std::size_t>(std::lround(
                                                    config.mix_clean_fraction * static_cast<double>(config.finetune_batch)));
    const std::size_t culprit_per_batch = std::max<std::size_t>(1, config.finetune_batch - clean_per_batch);

    FineTuneResult result;
    result.model = model;
    result.culprit_ids = culprit.sample_ids;

    Rng rng(derive_seed(seed, 0, "finetune"));
    std::vector<std::size_t> order(n_cul);
    std::vector<int> labels;
    for (std::size_t epoch = 0; epoch < config.finetune_epochs; ++epoch) {
        for (std::size_t i = 0; i < n_cul; ++i) order[i] = i;
        for (std::size_t i = n_cul - 1; i > 0; --i) {
            std::swap(order[i], order[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(i)))]);
        }
        for (std::size_t start = 0; start < n_cul; start += culprit_per_batch) {
            const std::size_t len = std::min(culprit_per_batch, n_cul - start);
            const std::size_t rows = len + clean_per_batch;
            if (rows < 2) continue;
            Matrix batch(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
            labels.clear();
            for (std::size_t k = 0; k < len; ++k) {
                batch.row(static_cast<Eigen::Index>(k)) = culprit_images.row(static_cast<Eigen::Index>(order[start + k]));
                labels.push_back(culprit_labels[order[start + k]]);
            }
            for (std::size_t k = 0; k < clean_per_batch; ++k) {
                const auto row = static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(reserve) - 1));
                result.clean_rows.push_back(row);
                batch.row(static_cast<Eigen::Index>(len + k)) = clean_reserve.images.row(static_cast<Eigen::Index>(row));
                labels.push_back(clean_reserve.labels[row]);
            }
            auto [preds, grads] = forward_backward(result.model, batch, NormMode::BatchStats,
                                                   LossKind::cross_entropy(labels), GradScope::AllWeightsAndAffine);
            result.final_loss = cross_entropy_loss(preds, labels);
            if (!std::isfinite(result.final_loss)) {
                throw Error("diverged");
            }
            result.model = sgd_step(std::move(result.model), grads, config.finetune_lr);
        }
    }

    // Statistics over the culprit samples plus a clean draw in the batch proportion.
    std::size_t n_clean_stats = 0;
    if (reserve > 0 && config.mix_clean_fraction > 0.0) {
        n_clean_stats = static_cast<std::size_t>(std::lround(static_cast<double>(n_cul) * config.mix_clean_fraction /
                                                             (1.0 - config.mix_clean_fraction)));
    }
    Matrix stats_set(static_cast<Eigen::Index>(n_cul + n_clean_stats), static_cast<Eigen::Index>(cols));
    stats_set.topRows(static_cast<Eigen::Index>(n_cul)) = culprit_images;
    Rng stats_rng(derive_seed(seed, 1, "finetune-stats"));
    for (std::size_t k = 0; k < n_clean_stats; ++k) {
        const auto row = static_cast<std::size_t>(uniform_int(stats_rng, 0, static_cast<int>(reserve) - 1));
        result.clean_rows.push_back(row);
        stats_set.row(static_cast<Eigen::Index>(n_cul + k)) = clean_reserve.images.row(static_cast<Eigen::Index>(row));
    }
    auto [mean, var] = hidden_statistics(result.model, stats_set);
    result.model.running_mean = std::move(mean);
    result.model.running_var = var.cwiseMax(kNormEpsilon);
    if (!result.model.all_finite()) {
        throw Error("diverged");
    }
    return result;
}

void deploy(const ModelParams& model, TtaAdapter& adapter) { adapter.reset(model); }

}  // namespace saf
