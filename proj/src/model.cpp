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
#include "saf/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

namespace saf {

ArchSpec::ArchSpec(std::size_t input_dim, std::size_t hidden_dim, std::size_t num_classes)
    : input_dim_(input_dim), hidden_dim_(hidden_dim), num_classes_(num_classes) {
    if (input_dim == 0 || hidden_dim == 0 || num_classes == 0) {
        throw Error("invalid architecture: all dimensions must be >= 1");
    }
}

std::size_t ArchSpec::total_params() const {
    return input_dim_ * hidden_dim_ + hidden_dim_ + 2 * hidden_dim_ + hidden_dim_ * num_classes_ + num_classes_;
}

namespace {

template <typename Derived>
bool bytes_equal(const Eigen::DenseBase<Derived>& a, const Eigen::DenseBase<Derived>& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        return false;
    }
    return std::memcmp(a.derived().data(), b.derived().data(),
                       static_cast<std::size_t>(a.size()) * sizeof(double)) == 0;
}

struct ForwardCache {
    Matrix z1;
    Vector inv_std;
    Matrix xhat;
    Matrix y;
    Matrix act;
    Matrix log_probs;
    Matrix probs;
};

ForwardCache run_forward(const ModelParams& m, const Matrix& batch, NormMode mode) {
    const auto rows = batch.rows();
    if (rows == 0) {
        throw Error("empty batch");
    }
    if (static_cast<std::size_t>(batch.cols()) != m.arch.input_dim()) {
        throw Error("shape mismatch: batch width does not match input_dim");
    }
    if (mode == NormMode::BatchStats && rows < 2) {
        throw Error("degenerate batch statistics");
    }

    ForwardCache c;
    c.z1 = batch * m.w1;
    c.z1.rowwise() += m.b1.transpose();

    Vector mean;
    Vector var;
    if (mode == NormMode::BatchStats) {
        mean = c.z1.colwise().mean().transpose();
        var = (c.z1.rowwise() - mean.transpose()).array().square().colwise().mean().transpose();
    } else {
        mean = m.running_mean;
        var = m.running_var;
    }
    c.inv_std = (var.array() + kNormEpsilon).rsqrt().matrix();
    c.xhat = (c.z1.rowwise() - mean.transpose()).array().rowwise() * c.inv_std.transpose().array();
    c.y = c.xhat.array().rowwise() * m.gamma.transpose().array();
    c.y.rowwise() += m.beta.transpose();
    c.act = c.y.cwiseMax(0.0);

    Matrix logits = c.act * m.w2;
    logits.rowwise() += m.b2.transpose();
    const Vector row_max = logits.rowwise().maxCoeff();
    Matrix shifted = logits.colwise() - row_max;
    const Vector log_sum = shifted.array().exp().rowwise().sum().log().matrix();
    c.log_probs = shifted.colwise() - log_sum;
    c.probs = c.log_probs.array().exp().matrix();
    // exp(log p) can drift from summing to one by a few ulps; renormalize.
    const Vector sums = c.probs.rowwise().sum();
    c.probs = c.probs.array().colwise() / sums.array();
    return c;
}

BatchPredictions to_predictions(Matrix probs) {
    BatchPredictions p;
    const auto rows = probs.rows();
    p.predicted_labels.resize(static_cast<std::size_t>(rows));
    p.confidences.resize(static_cast<std::size_t>(rows));
    for (Eigen::Index i = 0; i < rows; ++i) {
        Eigen::Index best = 0;
        double best_value = probs(i, 0);
        for (Eigen::Index k = 1; k < probs.cols(); ++k) {
            if (probs(i, k) > best_value) {  // strict: ties keep the lower index
                best_value = probs(i, k);
                best = k;
            }
        }
        p.predicted_labels[static_cast<std::size_t>(i)] = static_cast<int>(best);
        p.confidences[static_cast<std::size_t>(i)] = best_value;
    }
    p.probs = std::move(probs);
    return p;
}

Matrix loss_gradient_wrt_logits(const ForwardCache& c, const LossKind& loss, std::size_t num_classes) {
    const auto rows = c.probs.rows();
    const double inv_b = 1.0 / static_cast<double>(rows);
    if (loss.is_cross_entropy) {
        if (loss.labels.size() != static_cast<std::size_t>(rows)) {
            throw Error("shape mismatch: label count does not match batch size");
        }
        Matrix g = c.probs;
        for (Eigen::Index i = 0; i < rows; ++i) {
            const int label = loss.labels[static_cast<std::size_t>(i)];
            if (label < 0 || static_cast<std::size_t>(label) >= num_classes) {
                throw Error("shape mismatch: label out of range");
            }
            g(i, label) -= 1.0;
        }
        return g * inv_b;
    }
    // dH_i/dz_k = -p_k (log p_k + H_i)
    const Matrix plogp = c.probs.cwiseProduct(c.log_probs);
    const Vector row_entropy = -plogp.rowwise().sum();
    Matrix g = c.log_probs.colwise() + row_entropy;
    g = -(c.probs.cwiseProduct(g)) * inv_b;
    return g;
}

Gradients run_backward(const ModelParams& m, const Matrix& batch, const ForwardCache& c, NormMode mode,
                       const LossKind& loss, GradScope scope) {
    const Matrix g_logits = loss_gradient_wrt_logits(c, loss, m.arch.num_classes());

    Gradients g;
    g.scope = scope;
    const Matrix d_act = g_logits * m.w2.transpose();
    const Matrix d_y = (c.y.array() > 0.0).select(d_act, 0.0);
    g.gamma = d_y.cwiseProduct(c.xhat).colwise().sum().transpose();
    g.beta = d_y.colwise().sum().transpose();
    if (scope == GradScope::NormAffineOnly) {
        return g;
    }

    g.w2 = c.act.transpose() * g_logits;
    g.b2 = g_logits.colwise().sum().transpose();

    const Matrix d_xhat = d_y.array().rowwise() * m.gamma.transpose().array();
    Matrix d_z1;
    if (mode == NormMode::BatchStats) {
        const double n = static_cast<double>(batch.rows());
        const Eigen::RowVectorXd sum_dx = d_xhat.colwise().sum();
        const Eigen::RowVectorXd sum_dx_xhat = d_xhat.cwiseProduct(c.xhat).colwise().sum();
        Matrix inner = (d_xhat * n).rowwise() - sum_dx;
        inner -= (c.xhat.array().rowwise() * sum_dx_xhat.array()).matrix();
        d_z1 = (inner.array().rowwise() * c.inv_std.transpose().array()).matrix() / n;
    } else {
        d_z1 = d_xhat.array().rowwise() * c.inv_std.transpose().array();
    }
    g.w1 = batch.transpose() * d_z1;
    g.b1 = d_z1.colwise().sum().transpose();
    return g;
}

}  // namespace

bool ModelParams::weights_bit_equal(const ModelParams& o) const {
    return arch == o.arch && bytes_equal(w1, o.w1) && bytes_equal(b1, o.b1) && bytes_equal(w2, o.w2) &&
           bytes_equal(b2, o.b2);
}

bool ModelParams::bit_equal(const ModelParams& o) const {
    return weights_bit_equal(o) && bytes_equal(gamma, o.gamma) && bytes_equal(beta, o.beta) &&
           bytes_equal(running_mean, o.running_mean) && bytes_equal(running_var, o.running_var);
}

bool ModelParams::all_finite() const {
    return w1.allFinite() && b1.allFinite() && gamma.allFinite() && beta.allFinite() && running_mean.allFinite() &&
           running_var.allFinite() && w2.allFinite() && b2.allFinite();
}

bool Gradients::all_finite() const {
    bool ok = gamma.allFinite() && beta.allFinite();
    if (w1) ok = ok && w1->allFinite();
    if (b1) ok = ok && b1->allFinite();
    if (w2) ok = ok && w2->allFinite();
    if (b2) ok = ok && b2->allFinite();
    return ok;
}

double Gradients::squared_norm() const {
    double s = gamma.squaredNorm() + beta.squaredNorm();
    if (w1) s += w1->squaredNorm();
    if (b1) s += b1->squaredNorm();
    if (w2) s += w2->squaredNorm();
    if (b2) s += b2->squaredNorm();
    return s;
}

ModelParams init_model(const ArchSpec& arch, std::uint64_t seed) {
    const auto in = static_cast<Eigen::Index>(arch.input_dim());
    const auto hid = static_cast<Eigen::Index>(arch.hidden_dim());
    const auto out = static_cast<Eigen::Index>(arch.num_classes());

    Rng rng(seed);
    auto fill = [&rng](Matrix& w) {
        const double limit = std::sqrt(6.0 / static_cast<double>(w.rows() + w.cols()));
        for (Eigen::Index r = 0; r < w.rows(); ++r) {
            for (Eigen::Index col = 0; col < w.cols(); ++col) {
                w(r, col) = (2.0 * uniform01(rng) - 1.0) * limit;
            }
        }
    };

    ModelParams m;
    m.arch = arch;
    m.w1.resize(in, hid);
    fill(m.w1);
    m.b1 = Vector::Zero(hid);
    m.gamma = Vector::Ones(hid);
    m.beta = Vector::Zero(hid);
    m.running_mean = Vector::Zero(hid);
    m.running_var = Vector::Ones(hid);
    m.w2.resize(hid, out);
    fill(m.w2);
    m.b2 = Vector::Zero(out);
    return m;
}

BatchPredictions forward(const ModelParams& model, const Matrix& batch, NormMode mode) {
    return to_predictions(run_forward(model, batch, mode).probs);
}

double entropy_loss(const BatchPredictions& preds) {
    double total = 0.0;
    for (Eigen::Index i = 0; i < preds.probs.rows(); ++i) {
        for (Eigen::Index k = 0; k < preds.probs.cols(); ++k) {
            const double p = preds.probs(i, k);
            if (p > 0.0) {
                total -= p * std::log(p);
            }
        }
    }
    return std::max(0.0, total / static_cast<double>(preds.probs.rows()));
}

double cross_entropy_loss(const BatchPredictions& preds, std::span<const int> labels) {
    if (labels.size() != static_cast<std::size_t>(preds.probs.rows())) {
        throw Error("shape mismatch: label count does not match batch size");
    }
    double total = 0.0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const double p = preds.probs(static_cast<Eigen::Index>(i), labels[i]);
        total -= std::log(std::max(p, 1e-300));
    }
    return total / static_cast<double>(labels.size());
}

Gradients backward(const ModelParams& model, const Matrix& batch, NormMode mode, const LossKind& loss,
                   GradScope scope) {
    const ForwardCache c = run_forward(model, batch, mode);
    return run_backward(model, batch, c, mode, loss, scope);
}

std::pair<BatchPredictions, Gradients> forward_backward(const ModelParams& model, const Matrix& batch,
                                                        NormMode mode, const LossKind& loss, GradScope scope) {
    ForwardCache c = run_forward(model, batch, mode);
    Gradients g = run_backward(model, batch, c, mode, loss, scope);
    return {to_predictions(std::move(c.probs)), std::move(g)};
}

ModelParams sgd_step(ModelParams model, const Gradients& grads, double lr) {
    if (!grads.all_finite()) {
        throw Error("diverged");
    }
    const auto hid = static_cast<Eigen::Index>(model.arch.hidden_dim());
    if (grads.gamma.size() != hid || grads.beta.size() != hid) {
        throw Error("shape mismatch: gradient does not match model");
    }
    model.gamma -= lr * grads.gamma;
    model.beta -= lr * grads.beta;
    if (grads.scope == GradScope::AllWeightsAndAffine) {
        if (!grads.w1 || !grads.b1 || !grads.w2 || !grads.b2 || grads.w1->rows() != model.w1.rows() ||
            grads.w1->cols() != model.w1.cols() || grads.w2->rows() != model.w2.rows() ||
            grads.w2->cols() != model.w2.cols()) {
            throw Error("shape mismatch: gradient does not match model");
        }
        model.w1 -= lr * *grads.w1;
        model.b1 -= lr * *grads.b1;
        model.w2 -= lr * *grads.w2;
        model.b2 -= lr * *grads.b2;
    }
    return model;
}

std::pair<Vector, Vector> hidden_statistics(const ModelParams& model, const Matrix& images) {
    Matrix z1 = images * model.w1;
    z1.rowwise() += model.b1.transpose();
    Vector mean = z1.colwise().mean().transpose();
    Vector var = (z1.rowwise() - mean.transpose()).array().square().colwise().mean().transpose();
    return {std::move(mean), std::move(var)};
}

Matrix gather_rows(const Matrix& source, std::span<const std::size_t> rows) {
    Matrix out(static_cast<Eigen::Index>(rows.size()), source.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        out.row(static_cast<Eigen::Index>(i)) = source.row(static_cast<Eigen::Index>(rows[i]));
    }
    return out;
}

TrainResult train(ModelParams model, const LabeledSet& data, const TrainConfig& config) {
    const std::size_t n = data.size();
    if (n == 0 || static_cast<std::size_t>(data.images.rows()) != n) {
        throw Error("empty or inconsistent training set");
    }
    for (int label : data.labels) {
        if (label < 0 || static_cast<std::size_t>(label) >= model.arch.num_classes()) {
            throw Error("label out of range");
        }
    }
    if (config.batch_size < 2) {
        throw Error("batch_size must be >= 2");
    }

    std::vector<std::size_t> order(n);
    std::vector<int> batch_labels;
    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        Rng rng(derive_seed(config.seed, epoch, "train-shuffle"));
        for (std::size_t i = n - 1; i > 0; --i) {
            const auto j = static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(i)));
            std::swap(order[i], order[j]);
        }
        for (std::size_t start = 0; start < n; start += config.batch_size) {
            const std::size_t len = std::min(config.batch_size, n - start);
            if (len < 2) {
                continue;
            }
            const std::span<const std::size_t> idx(order.data() + start, len);
            const Matrix batch = gather_rows(data.images, idx);
            batch_labels.clear();
            for (std::size_t k : idx) {
                batch_labels.push_back(data.labels[k]);
            }

            auto [preds, grads] = forward_backward(model, batch, NormMode::BatchStats,
                                                   LossKind::cross_entropy(batch_labels),
                                                   GradScope::AllWeightsAndAffine);
            const double loss = cross_entropy_loss(preds, batch_labels);
            if (!std::isfinite(loss)) {
                throw Error("diverged");
            }
            auto [mean, var] = hidden_statistics(model, batch);
            model = sgd_step(std::move(model), grads, config.lr);
            model.running_mean = (1.0 - config.momentum) * model.running_mean + config.momentum * mean;
            model.running_var = ((1.0 - config.momentum) * model.running_var + config.momentum * var)
                                    .cwiseMax(kNormEpsilon);
        }
    }
    TrainResult result;
    result.train_error = evaluate(model, data);
    result.model = std::move(model);
    return result;
}

double evaluate(const ModelParams& model, const LabeledSet& data) {
    const std::size_t n = data.size();
    if (n == 0) {
        throw Error("empty evaluation set");
    }
    constexpr Eigen::Index kChunk = 1024;
    std::size_t wrong = 0;
    for (Eigen::Index start = 0; start < static_cast<Eigen::Index>(n); start += kChunk) {
        const Eigen::Index len = std::min(kChunk, static_cast<Eigen::Index>(n) - start);
        const BatchPredictions p = forward(model, data.images.middleRows(start, len), NormMode::RunningStats);
        for (Eigen::Index i = 0; i < len; ++i) {
            if (p.predicted_labels[static_cast<std::size_t>(i)] != data.labels[static_cast<std::size_t>(start + i)]) {
                ++wrong;
            }
        }
    }
    return static_cast<double>(wrong) / static_cast<double>(n);
}

ParamCounts param_counts(const ModelParams& model) {
    return {model.arch.total_params(), model.arch.norm_affine_params()};
}

// ---- checkpoint ------------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'S', 'A', 'F', 'C', 'K', 'P', 'T', '\0'};

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

class Writer {
  public:
    explicit Writer(std::ofstream& out) : out_(out) {}
    template <typename T>
    void pod(const T& v) {
        out_.write(reinterpret_cast<const char*>(&v), sizeof(T));
    }
    void tensor(const Matrix& m) {
        pod<std::uint64_t>(static_cast<std::uint64_t>(m.rows()));
        pod<std::uint64_t>(static_cast<std::uint64_t>(m.cols()));
        for (Eigen::Index r = 0; r < m.rows(); ++r) {
            for (Eigen::Index c = 0; c < m.cols(); ++c) {
                pod<double>(m(r, c));
            }
        }
    }
    void tensor(const Vector& v) {
        pod<std::uint64_t>(static_cast<std::uint64_t>(v.size()));
        pod<std::uint64_t>(1);
        out_.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
    }

  private:
    std::ofstream& out_;
};

class Reader {
  public:
    explicit Reader(std::vector<char> bytes) : bytes_(std::move(bytes)) {}

    template <typename T>
    T pod() {
        if (pos_ + sizeof(T) > bytes_.size()) {
            throw CheckpointError(CheckpointError::Kind::Truncated, "truncated checkpoint");
        }
        T v;
        std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return v;
    }

    Matrix tensor(std::size_t rows, std::size_t cols) {
        const auto r = pod<std::uint64_t>();
        const auto c = pod<std::uint64_t>();
        if (r != rows || c != cols) {
            throw CheckpointError(CheckpointError::Kind::ShapeMismatch, "shape mismatch");
        }
        Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
        for (std::size_t i = 0; i < rows; ++i) {
            for (std::size_t j = 0; j < cols; ++j) {
                m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = pod<double>();
            }
        }
        return m;
    }

    Vector vec(std::size_t len) { return tensor(len, 1).col(0); }

    bool at_end() const { return pos_ == bytes_.size(); }

  private:
    std::vector<char> bytes_;
    std::size_t pos_ = 0;
};

}  // namespace

void save_checkpoint(const ModelParams& model, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw CheckpointError(CheckpointError::Kind::Io, "cannot open checkpoint for writing: " + path.string());
    }
    Writer w(out);
    out.write(kMagic, sizeof(kMagic));
    w.pod<std::uint32_t>(kCheckpointVersion);
    w.pod<std::uint64_t>(model.arch.input_dim());
    w.pod<std::uint64_t>(model.arch.hidden_dim());
    w.pod<std::uint64_t>(model.arch.num_classes());
    w.tensor(model.w1);
    w.tensor(model.b1);
    w.tensor(model.gamma);
    w.tensor(model.beta);
    w.tensor(model.running_mean);
    w.tensor(model.running_var);
    w.tensor(model.w2);
    w.tensor(model.b2);
    if (!out) {
        throw CheckpointError(CheckpointError::Kind::Io, "failed writing checkpoint: " + path.string());
    }
}

ModelParams load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw CheckpointError(CheckpointError::Kind::Io, "cannot open checkpoint: " + path.string());
    }
    std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    Reader r(std::move(bytes));

    char magic[sizeof(kMagic)];
    for (char& ch : magic) {
        ch = r.pod<char>();
    }
    if (std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
        throw CheckpointError(CheckpointError::Kind::BadMagic, "not a checkpoint file");
    }
    const auto version = r.pod<std::uint32_t>();
    if (version != kCheckpointVersion) {
        throw CheckpointError(CheckpointError::Kind::VersionMismatch, "checkpoint version mismatch");
    }
    const auto in_dim = r.pod<std::uint64_t>();
    const auto hid = r.pod<std::uint64_t>();
    const auto cls = r.pod<std::uint64_t>();
    if (in_dim == 0 || hid == 0 || cls == 0) {
        throw CheckpointError(CheckpointError::Kind::ShapeMismatch, "shape mismatch");
    }

    ModelParams m;
    m.arch = ArchSpec(in_dim, hid, cls);
    m.w1 = r.tensor(in_dim, hid);
    m.b1 = r.vec(hid);
    m.gamma = r.vec(hid);
    m.beta = r.vec(hid);
    m.running_mean = r.vec(hid);
    m.running_var = r.vec(hid);
    m.w2 = r.tensor(hid, cls);
    m.b2 = r.vec(cls);
    if (!r.at_end()) {
        throw CheckpointError(CheckpointError::Kind::ShapeMismatch, "shape mismatch");
    }
    return m;
}

}  // namespace saf
