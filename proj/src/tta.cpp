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
#include "saf/tta.hpp"

#include <cmath>

namespace saf {

void AdapterConfig::validate() const {
    if (batch_size < 2) {
        throw Error("adapter batch_size must be >= 2");
    }
    if (!(lr > 0.0)) {
        throw Error("adapter lr must be > 0");
    }
    if (steps_per_batch == 0) {
        throw Error("adapter steps_per_batch must be >= 1");
    }
    if (stats_mode == StatsMode::BlendEMA && !(blend_momentum > 0.0 && blend_momentum <= 1.0)) {
        throw Error("adapter blend_momentum must be in (0,1]");
    }
}

TtaAdapter::TtaAdapter(ModelParams deployed, AdapterConfig config)
    : model_(std::move(deployed)), config_(config) {
    config_.validate();
}

void TtaAdapter::reset(ModelParams deployed) {
    model_ = std::move(deployed);
    batches_seen_ = 0;
}

Matrix TtaAdapter::pad(const Matrix& batch) const {
    const auto want = static_cast<Eigen::Index>(config_.batch_size);
    if (batch.rows() == want) {
        return batch;
    }
    if (batch.rows() == 0 || batch.rows() > want) {
        throw Error("batch size must be in [1, batch_size]");
    }
    Matrix out(want, batch.cols());
    out.topRows(batch.rows()) = batch;
    for (Eigen::Index r = batch.rows(); r < want; ++r) {
        out.row(r) = batch.row(batch.rows() - 1);
    }
    return out;
}

BatchPredictions TtaAdapter::adapt_and_predict(const Matrix& batch) {
    const Matrix full = pad(batch);

    // In BlendEMA mode the running statistics absorb the batch statistics
    // first and the model then normalizes with them.
    NormMode mode = NormMode::BatchStats;
    if (config_.stats_mode == StatsMode::BlendEMA) {
        auto [mean, var] = hidden_statistics(model_, full);
        const double m = config_.blend_momentum;
        model_.running_mean = (1.0 - m) * model_.running_mean + m * mean;
        model_.running_var = ((1.0 - m) * model_.running_var + m * var).cwiseMax(kNormEpsilon);
        mode = NormMode::RunningStats;
    }

    BatchPredictions first;
    for (std::size_t step = 0; step < config_.steps_per_batch; ++step) {
        auto [preds, grads] = forward_backward(model_, full, mode, LossKind::entropy(), GradScope::NormAffineOnly);
        if (!preds.probs.allFinite() || !grads.all_finite()) {
            throw Error("adaptation diverged");
        }
        model_ = sgd_step(std::move(model_), grads, config_.lr);
        if (step == 0) {
            first = std::move(preds);
        }
    }
    ++batches_seen_;

    if (batch.rows() < full.rows()) {
        const auto n = batch.rows();
        first.probs.conservativeResize(n, Eigen::NoChange);
        first.predicted_labels.resize(static_cast<std::size_t>(n));
        first.confidences.resize(static_cast<std::size_t>(n));
    }
    return first;
}

}  // namespace saf
