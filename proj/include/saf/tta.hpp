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
#include <utility>

#include "saf/model.hpp"

namespace saf {

enum class StatsMode { UseBatchStats, BlendEMA };

struct AdapterConfig {
    std::size_t batch_size = 16;
    double lr = 1e-3;
    std::size_t steps_per_batch = 1;
    StatsMode stats_mode = StatsMode::UseBatchStats;
    /// Only used with BlendEMA: weight of the current batch statistics.
    double blend_momentum = 0.1;

    void validate() const;
};

/// Online test-time adaptation by entropy minimization over the
/// normalization scale and shift. The weight set of the live model never
/// changes.
class TtaAdapter {
  public:
    TtaAdapter(ModelParams deployed, AdapterConfig config);

    /// Predicts the batch from normalization statistics of the batch itself
    /// (or an EMA blend), then takes steps_per_batch entropy-descent steps on
    /// gamma and beta. A batch shorter than batch_size is padded by repeating
    /// its last row; only the real rows are returned.
    BatchPredictions adapt_and_predict(const Matrix& batch);

    /// Restarts from `deployed`; equivalent to a fresh adapter with the same config.
    void reset(ModelParams deployed);

    const ModelParams& model() const { return model_; }
    const AdapterConfig& config() const { return config_; }
    std::size_t batches_seen() const { return batches_seen_; }

  private:
    Matrix pad(const Matrix& batch) const;

    ModelParams model_;
    AdapterConfig config_;
    std::size_t batches_seen_ = 0;
};

}  // namespace saf
