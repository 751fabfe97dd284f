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

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "saf/common.hpp"

namespace saf {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

inline constexpr double kNormEpsilon = 1e-5;
inline constexpr double kDefaultMomentum = 0.1;

/// Layer sizes of the classifier. Validated on construction.
class ArchSpec {
  public:
    ArchSpec() = default;
    ArchSpec(std::size_t input_dim, std::size_t hidden_dim, std::size_t num_classes);

    std::size_t input_dim() const { return input_dim_; }
    std::size_t hidden_dim() const { return hidden_dim_; }
    std::size_t num_classes() const { return num_classes_; }

    /// Trainable parameter count; normalization statistics are excluded.
    std::size_t total_params() const;
    std::size_t norm_affine_params() const { return 2 * hidden_dim_; }

    friend bool operator==(const ArchSpec&, const ArchSpec&) = default;

  private:
    std::size_t input_dim_ = 256;
    std::size_t hidden_dim_ = 512;
    std::size_t num_classes_ = 10;
};

/// Classifier parameters. The partition is:
///   weights      = {w1, b1, w2, b2}
///   norm-affine  = {gamma, beta}
///   statistics   = {running_mean, running_var}
struct ModelParams {
    ArchSpec arch;
    Matrix w1;  // input_dim x hidden_dim
    Vector b1;
    Vector gamma;
    Vector beta;
    Vector running_mean;
    Vector running_var;
    Matrix w2;  // hidden_dim x num_classes
    Vector b2;

    bool bit_equal(const ModelParams& other) const;
    bool weights_bit_equal(const ModelParams& other) const;
    bool all_finite() const;
};

enum class NormMode { RunningStats, BatchStats };
enum class GradScope { NormAffineOnly, AllWeightsAndAffine };

struct BatchPredictions {
    Matrix probs;  // batch x num_classes
    std::vector<int> predicted_labels;
    std::vector<double> confidences;

    std::size_t size() const { return predicted_labels.size(); }
};

/// Gradients for the parameters in `scope`. Weight entries are empty when
/// scope is NormAffineOnly.
struct Gradients {
    GradScope scope = GradScope::NormAffineOnly;
    Vector gamma;
    Vector beta;
    std::optional<Matrix> w1;
    std::optional<Vector> b1;
    std::optional<Matrix> w2;
    std::optional<Vector> b2;

    bool all_finite() const;
    double squared_norm() const;
};

/// Loss selector for backward(). Labels are present iff cross-entropy.
struct LossKind {
    static LossKind entropy() { return LossKind{}; }
    static LossKind cross_entropy(std::span<const int> labels) { return LossKind{labels, true}; }

    std::span<const int> labels{};
    bool is_cross_entropy = false;
};

struct LabeledSet {
    Matrix images;  // n x input_dim, one image per row
    std::vector<int> labels;

    std::size_t size() const { return labels.size(); }
};

struct TrainConfig {
    std::size_t epochs = 30;
    std::size_t batch_size = 32;
    double lr = 0.05;
    double momentum = kDefaultMomentum;
    std::uint64_t seed = 0;
};

struct TrainResult {
    ModelParams model;
    double train_error = 0.0;
};

struct ParamCounts {
    std::size_t total = 0;
    std::size_t norm_affine = 0;
};

ModelParams init_model(const ArchSpec& arch, std::uint64_t seed);

/// Softmax classifier forward pass:
/// affine(w1,b1) -> normalize -> gamma/beta -> ReLU -> affine(w2,b2) -> softmax.
BatchPredictions forward(const ModelParams& model, const Matrix& batch, NormMode mode);

/// Mean Shannon entropy (nats) of the rows of `preds.probs`.
double entropy_loss(const BatchPredictions& preds);

/// Mean cross-entropy of the rows of `preds.probs` against `labels`.
double cross_entropy_loss(const BatchPredictions& preds, std::span<const int> labels);

/// Exact gradients of the mean loss. With BatchStats the gradient flows
/// through the batch mean and variance.
Gradients backward(const ModelParams& model, const Matrix& batch, NormMode mode, const LossKind& loss,
                   GradScope scope);

/// Forward and backward in one pass; returns the pre-update predictions.
std::pair<BatchPredictions, Gradients> forward_backward(const ModelParams& model, const Matrix& batch,
                                                        NormMode mode, const LossKind& loss, GradScope scope);

/// Decrements the in-scope parameters by lr * gradient. Throws "diverged"
/// if any gradient entry is non-finite; the model is untouched in that case.
ModelParams sgd_step(ModelParams model, const Gradients& grads, double lr);

/// Column means and population variances of the pre-normalization
/// activations over `images`.
std::pair<Vector, Vector> hidden_statistics(const ModelParams& model, const Matrix& images);

/// Mini-batch SGD in BatchStats mode; running statistics follow an EMA.
TrainResult train(ModelParams model, const LabeledSet& data, const TrainConfig& config);

/// Misclassification rate using running statistics.
double evaluate(const ModelParams& model, const LabeledSet& data);

ParamCounts param_counts(const ModelParams& model);

/// Checkpoint layout (little-endian):
///   magic "SAFCKPT\0" | u32 version | u64 input | u64 hidden | u64 classes
///   then for each of w1, b1, gamma, beta, running_mean, running_var, w2, b2:
///   u64 rows | u64 cols | rows*cols f64 in row-major order
void save_checkpoint(const ModelParams& model, const std::filesystem::path& path);
ModelParams load_checkpoint(const std::filesystem::path& path);

inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public Error {
  public:
    enum class Kind { Io, BadMagic, VersionMismatch, Truncated, ShapeMismatch };

    CheckpointError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}
    Kind kind() const { return kind_; }

  private:
    Kind kind_;
};

/// Gathers the given rows of `source` into a new matrix.
Matrix gather_rows(const Matrix& source, std::span<const std::size_t> rows);

}  // namespace saf
