#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include "stilt/data.hpp"
#include "stilt/metrics.hpp"
#include "stilt/model.hpp"

namespace stilt {

enum class StopCriterion { MinValLoss, MaxValWeightedF1 };

inline const char* criterion_name(StopCriterion c) {
    return c == StopCriterion::MinValLoss ? "min_val_loss" : "max_val_weighted_f1";
}

inline StopCriterion parse_criterion(const std::string& s) {
    if (s == "min_val_loss") return StopCriterion::MinValLoss;
    if (s == "max_val_weighted_f1") return StopCriterion::MaxValWeightedF1;
    throw std::invalid_argument("unknown early_stop_criterion: " + s);
}

struct TrainConfig {
    double lr_max = 5e-5;
    double lr_min = 1.5e-5;
    std::size_t max_epochs = 40;
    std::size_t batch_size = 32;
    double beta1 = 0.5;
    double beta2 = 0.9;
    double weight_decay = 0.9;
    bool amsgrad = false;
    double dropout = 0.2;
    std::size_t patience = 5;
    StopCriterion early_stop_criterion = StopCriterion::MinValLoss;

    void validate() const {
        if (!(lr_min > 0.0) || lr_min > lr_max)
            throw std::invalid_argument("train config: need 0 < lr_min <= lr_max");
        if (batch_size < 2)
            throw std::invalid_argument("train config: batch_size must be >= 2 (batch norm)");
        if (patience < 1) throw std::invalid_argument("train config: patience must be >= 1");
        if (max_epochs < 1) throw std::invalid_argument("train config: max_epochs must be >= 1");
        if (dropout < 0.0 || dropout >= 1.0)
            throw std::invalid_argument("train config: dropout must be in [0, 1)");
    }
};

/// Per-class loss weights w_c = 1 - N_c / sum(N), from the training split
/// actually in use (recomputed for fractional subsets).
struct LossWeights {
    std::array<double, 3> w = {1.0, 1.0, 1.0};

    static LossWeights from_counts(const ClassCounts& counts) {
        const auto total = static_cast<double>(counts.total());
        if (total == 0.0) throw std::invalid_argument("loss weights: empty class counts");
        LossWeights lw;
        for (std::size_t c = 0; c < 3; ++c)
            lw.w[c] = 1.0 - static_cast<double>(counts.counts[c]) / total;
        return lw;
    }
};

struct LossResult {
    double loss = 0.0;
    Matrix d_logits;
    double weight_sum = 0.0;  // sum of per-sample weights in the batch
};

/// Class-weighted cross entropy, weighted-mean convention:
/// L = sum_n w_{y_n} * nll_n / sum_n w_{y_n}.
inline LossResult weighted_ce_loss(const Matrix& logits, const std::vector<int>& labels,
                                   const LossWeights& weights) {
    if (logits.rows != labels.size())
        throw std::invalid_argument("weighted_ce_loss: batch size mismatch");
    if (logits.cols != kNumClasses)
        throw std::invalid_argument("weighted_ce_loss: logits must have 3 columns, got " +
                                    logits.shape_str());

    const std::size_t batch = logits.rows;
    double weight_sum = 0.0;
    for (const int y : labels) {
        if (y < 0 || y > 2)
            throw std::invalid_argument("weighted_ce_loss: invalid label " + std::to_string(y));
        weight_sum += weights.w[static_cast<std::size_t>(y)];
    }
    if (weight_sum == 0.0)
        throw std::invalid_argument("weighted_ce_loss: total class weight is zero");

    LossResult res;
    res.weight_sum = weight_sum;
    res.d_logits = Matrix(batch, kNumClasses);
    double acc = 0.0;
    for (std::size_t r = 0; r < batch; ++r) {
        const double* row = logits.row(r);
        double mx = row[0];
        for (std::size_t c = 1; c < kNumClasses; ++c) mx = std::max(mx, row[c]);
        double sum_exp = 0.0;
        for (std::size_t c = 0; c < kNumClasses; ++c) sum_exp += std::exp(row[c] - mx);
        const auto y = static_cast<std::size_t>(labels[r]);
        const double wy = weights.w[y];
        acc += wy * (std::log(sum_exp) - (row[y] - mx));
        for (std::size_t c = 0; c < kNumClasses; ++c) {
            const double p = std::exp(row[c] - mx) / sum_exp;
            res.d_logits(r, c) = wy * (p - (c == y ? 1.0 : 0.0)) / weight_sum;
        }
    }
    res.loss = acc / weight_sum;
    return res;
}

/// Cosine annealing from lr_max (epoch 0) down to lr_min (epoch max_epochs).
inline double cosine_lr(std::size_t epoch, const TrainConfig& config) {
    const double t = static_cast<double>(epoch) / static_cast<double>(config.max_epochs);
    return config.lr_min +
           0.5 * (config.lr_max - config.lr_min) * (1.0 + std::cos(std::numbers::pi * t));
}

/// AdamW with decoupled weight decay: theta <- theta - lr*mhat/(sqrt(vhat)+eps)
/// - lr*decay*theta. Frozen tensors carry no state and are never touched.
class AdamW {
public:
    AdamW(ModelParameters& params, const TrainConfig& config)
        : beta1_(config.beta1),
          beta2_(config.beta2),
          weight_decay_(config.weight_decay),
          amsgrad_(config.amsgrad) {
        params.for_each_tensor([&](const std::string& name, ParamTensor& t) {
            if (!t.trainable) return;
            Slot slot;
            slot.name = name;
            slot.m = Matrix(t.value.rows, t.value.cols);
            slot.v = Matrix(t.value.rows, t.value.cols);
            if (amsgrad_) slot.v_max = Matrix(t.value.rows, t.value.cols);
            slots_.push_back(std::move(slot));
        });
    }

    std::size_t step_count() const { return t_; }

    void step(ModelParameters& params, double lr) {
        ++t_;
        const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
        std::size_t cursor = 0;
        params.for_each_tensor([&](const std::string& name, ParamTensor& tensor) {
            if (!tensor.trainable) return;
            if (cursor >= slots_.size() || slots_[cursor].name != name)
                throw std::logic_error("adamw: trainable set changed mid-run at " + name);
            Slot& slot = slots_[cursor++];
            for (std::size_t i = 0; i < tensor.value.size(); ++i) {
                const double g = tensor.grad.data[i];
                slot.m.data[i] = beta1_ * slot.m.data[i] + (1.0 - beta1_) * g;
                slot.v.data[i] = beta2_ * slot.v.data[i] + (1.0 - beta2_) * g * g;
                double v_for_update = slot.v.data[i];
                if (amsgrad_) {
                    slot.v_max.data[i] = std::max(slot.v_max.data[i], slot.v.data[i]);
                    v_for_update = slot.v_max.data[i];
                }
                const double m_hat = slot.m.data[i] / bc1;
                const double v_hat = v_for_update / bc2;
                const double theta = tensor.value.data[i];
                tensor.value.data[i] = theta - lr * m_hat / (std::sqrt(v_hat) + kEps) -
                                       lr * weight_decay_ * theta;
            }
        });
    }

private:
    static constexpr double kEps = 1e-8;
    struct Slot {
        std::string name;
        Matrix m;
        Matrix v;
        Matrix v_max;
    };
    double beta1_, beta2_, weight_decay_;
    bool amsgrad_;
    std::size_t t_ = 0;
    std::vector<Slot> slots_;
};

struct HistoryRow {
    std::size_t epoch = 0;  // 1-based within the stage
    std::string stage;
    double train_loss = 0.0;
    double val_loss = 0.0;
    double val_weighted_f1 = 0.0;
    double lr = 0.0;
};

struct EvalResult {
    std::vector<int> predictions;
    Matrix logits;
    double loss = 0.0;
    MetricReport metrics;
};

/// Eval-mode predictions and loss over a record list, in stable record
/// order. Batched only for memory; results are batch-size independent.
inline EvalResult evaluate(ModelParameters& params, const std::vector<EmbeddingRecord>& records,
                           const DatasetManifest& manifest, const LossWeights& weights,
                           std::size_t batch_size = 256) {
    if (records.empty()) throw std::invalid_argument("evaluate: empty record list");
    EvalResult out;
    out.logits = Matrix(records.size(), kNumClasses);
    std::vector<int> labels(records.size());
    DeterministicRng unused(0);  // eval-mode forward consumes no randomness

    double loss_acc = 0.0;
    double weight_acc = 0.0;
    for (std::size_t begin = 0; begin < records.size(); begin += batch_size) {
        const std::size_t end = std::min(begin + batch_size, records.size());
        std::vector<ModalityInput> inputs;
        std::vector<int> batch_labels;
        inputs.reserve(end - begin);
        for (std::size_t i = begin; i < end; ++i) {
            inputs.push_back(resolve_blank(records[i], manifest));
            batch_labels.push_back(records[i].label);
            labels[i] = records[i].label;
        }
        auto trace = forward(params, Batch::from_inputs(inputs, batch_labels), Mode::Eval, unused);
        const auto loss = weighted_ce_loss(trace.logits, batch_labels, weights);
        loss_acc += loss.loss * loss.weight_sum;
        weight_acc += loss.weight_sum;
        const auto preds = predict(trace);
        for (std::size_t i = begin; i < end; ++i) {
            out.predictions.push_back(preds[i - begin]);
            for (std::size_t c = 0; c < kNumClasses; ++c)
                out.logits(i, c) = trace.logits(i - begin, c);
        }
    }
    out.loss = loss_acc / weight_acc;
    out.metrics = weighted_metrics(labels, out.predictions);
    return out;
}

struct FitResult {
    ModelParameters best_params;
    std::vector<HistoryRow> history;
    std::size_t best_epoch = 0;
    double best_criterion = 0.0;
};

/// One training stage: minibatch AdamW with a cosine learning-rate schedule,
/// early stopping on the meme validation split, best-checkpoint restore.
/// Loss weights come from the class counts of `train` itself.
inline FitResult fit(ModelParameters params, const std::vector<EmbeddingRecord>& train,
                     const DatasetManifest& train_manifest,
                     const std::vector<EmbeddingRecord>& val,
                     const DatasetManifest& val_manifest, const TrainConfig& config,
                     DeterministicRng& rng, const std::string& stage = "train") {
    config.validate();
    if (train.size() < 2)
        throw std::invalid_argument("fit: need at least 2 training records (batch norm)");
    if (val.empty()) throw std::invalid_argument("fit: validation set is empty");

    params.config.dropout_rate = config.dropout;
    const LossWeights weights = LossWeights::from_counts(class_counts(train));

    std::vector<ModalityInput> inputs;
    inputs.reserve(train.size());
    for (const auto& r : train) inputs.push_back(resolve_blank(r, train_manifest));

    AdamW optimizer(params, config);
    FitResult result;
    const bool minimize = config.early_stop_criterion == StopCriterion::MinValLoss;
    double best = minimize ? std::numeric_limits<double>::infinity()
                           : -std::numeric_limits<double>::infinity();
    std::size_t epochs_since_best = 0;

    std::vector<std::size_t> order(train.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
        const double lr = cosine_lr(epoch - 1, config);
        rng.shuffle(order);

        double loss_acc = 0.0;
        double weight_acc = 0.0;
        std::size_t batch_index = 0;
        for (std::size_t begin = 0; begin < order.size(); begin += config.batch_size) {
            const std::size_t end = std::min(begin + config.batch_size, order.size());
            if (end - begin < 2) continue;  // batch norm cannot run a lone sample
            ++batch_index;
            std::vector<ModalityInput> batch_inputs;
            std::vector<int> batch_labels;
            batch_inputs.reserve(end - begin);
            for (std::size_t i = begin; i < end; ++i) {
                batch_inputs.push_back(inputs[order[i]]);
                batch_labels.push_back(train[order[i]].label);
            }
            params.zero_grad();
            auto trace =
                forward(params, Batch::from_inputs(batch_inputs, batch_labels), Mode::Train, rng);
            auto loss = weighted_ce_loss(trace.logits, batch_labels, weights);
            if (!std::isfinite(loss.loss))
                throw std::runtime_error("fit: non-finite loss in stage '" + stage + "' at epoch " +
                                         std::to_string(epoch) + ", batch " +
                                         std::to_string(batch_index) + ", lr " +
                                         std::to_string(lr));
            backward(params, trace, loss.d_logits);
            optimizer.step(params, lr);
            loss_acc += loss.loss * loss.weight_sum;
            weight_acc += loss.weight_sum;
        }

        auto val_eval = evaluate(params, val, val_manifest, weights);
        HistoryRow row;
        row.epoch = epoch;
        row.stage = stage;
        row.train_loss = weight_acc > 0.0 ? loss_acc / weight_acc : 0.0;
        row.val_loss = val_eval.loss;
        row.val_weighted_f1 = val_eval.metrics.weighted_f1;
        row.lr = lr;
        result.history.push_back(row);

        const double criterion = minimize ? val_eval.loss : val_eval.metrics.weighted_f1;
        const bool improved = minimize ? criterion < best : criterion > best;
        if (improved) {
            best = criterion;
            result.best_params = params;
            result.best_epoch = epoch;
            epochs_since_best = 0;
        } else {
            ++epochs_since_best;
            if (epochs_since_best >= config.patience) break;
        }
    }
    result.best_criterion = best;
    return result;
}

// ---------------------------------------------------------------------------
// Training protocols.
// ---------------------------------------------------------------------------

enum class Approach { Baseline, ImageSTILT, TextSTILT };

inline const char* approach_name(Approach a) {
    switch (a) {
        case Approach::Baseline: return "baseline";
        case Approach::ImageSTILT: return "image_stilt";
        default: return "text_stilt";
    }
}

inline Approach parse_approach(const std::string& s) {
    if (s == "baseline") return Approach::Baseline;
    if (s == "image_stilt") return Approach::ImageSTILT;
    if (s == "text_stilt") return Approach::TextSTILT;
    throw std::invalid_argument("unknown approach: " + s);
}

struct ProtocolSpec {
    Approach kind = Approach::Baseline;
    const Dataset* meme_dataset = nullptr;
    const Dataset* intermediate_dataset = nullptr;  // required unless Baseline
    /// Meme training subset for fractional runs; empty means the full split.
    std::vector<EmbeddingRecord> meme_train_subset;
    TrainConfig meme_config;
    TrainConfig intermediate_config;
    std::size_t fused_dim = 0;  // 0: use the embedding width
    std::uint64_t seed = 0;
};

struct ProtocolResult {
    ModelParameters final_params;
    std::vector<HistoryRow> history;  // all stages, in order
    EvalResult test_eval;
    std::vector<std::string> test_ids;
    std::vector<int> test_labels;
};

inline ProtocolResult run_protocol(const ProtocolSpec& spec) {
    if (spec.meme_dataset == nullptr)
        throw std::invalid_argument("run_protocol: meme dataset is required");
    const Dataset& memes = *spec.meme_dataset;
    const bool is_stilt = spec.kind != Approach::Baseline;
    if (is_stilt && spec.intermediate_dataset == nullptr)
        throw std::invalid_argument(std::string("run_protocol: ") + approach_name(spec.kind) +
                                    " requires an intermediate dataset");

    if (is_stilt) {
        const Dataset& inter = *spec.intermediate_dataset;
        if (inter.manifest.dimension != memes.manifest.dimension)
            throw std::invalid_argument("run_protocol: dataset dimensions differ");
        const bool want_image_only = spec.kind == Approach::ImageSTILT;
        for (const auto& r : inter.train) {
            const bool image_only = r.image_embedding && !r.text_embedding;
            const bool text_only = r.text_embedding && !r.image_embedding;
            if (want_image_only && !image_only)
                throw std::invalid_argument(
                    "run_protocol: image_stilt intermediate data must be image-only (record '" +
                    r.id + "')");
            if (!want_image_only && !text_only)
                throw std::invalid_argument(
                    "run_protocol: text_stilt intermediate data must be text-only (record '" +
                    r.id + "')");
        }
    }

    ModelConfig model_config;
    model_config.embedding_dim = memes.manifest.dimension;
    model_config.fused_dim = spec.fused_dim == 0 ? memes.manifest.dimension : spec.fused_dim;
    model_config.dropout_rate = spec.meme_config.dropout;

    DeterministicRng init_rng(spec.seed, 1);
    DeterministicRng stage1_rng(spec.seed, 2);
    DeterministicRng stage2_rng(spec.seed, 3);

    ModelParameters params = init_model(model_config, init_rng);
    ProtocolResult result;

    if (is_stilt) {
        // Intermediate stage: freeze the adapter of the modality that is
        // absent from the unimodal data; early-stop on meme-val weighted F1.
        FreezeSpec freeze;
        if (spec.kind == Approach::ImageSTILT)
            freeze.freeze_text_adapter = true;
        else
            freeze.freeze_image_adapter = true;
        set_freeze(params, freeze);

        auto stage1 = fit(std::move(params), spec.intermediate_dataset->train,
                          spec.intermediate_dataset->manifest, memes.val, memes.manifest,
                          spec.intermediate_config, stage1_rng, "intermediate");
        params = std::move(stage1.best_params);
        for (auto& row : stage1.history) result.history.push_back(row);
        set_freeze(params, FreezeSpec{});  // target stage trains everything
    }

    const std::vector<EmbeddingRecord>& meme_train =
        spec.meme_train_subset.empty() ? memes.train : spec.meme_train_subset;
    auto stage2 = fit(std::move(params), meme_train, memes.manifest, memes.val, memes.manifest,
                      spec.meme_config, stage2_rng, "meme");
    for (auto& row : stage2.history) result.history.push_back(row);

    const LossWeights weights = LossWeights::from_counts(class_counts(meme_train));
    result.final_params = std::move(stage2.best_params);
    result.test_eval = evaluate(result.final_params, memes.test, memes.manifest, weights);
    for (const auto& r : memes.test) {
        result.test_ids.push_back(r.id);
        result.test_labels.push_back(r.label);
    }
    return result;
}

}  // namespace stilt
