#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "stilt/layers.hpp"
#include "stilt/matrix.hpp"
#include "stilt/param.hpp"
#include "stilt/rng.hpp"

namespace stilt {

inline constexpr std::size_t kNumClasses = 3;
/// Modality attention stacks reduce D -> 256 -> 64 -> 8 -> 1.
inline constexpr std::array<std::size_t, 3> kAttnHidden = {256, 64, 8};
/// Classifier head runs D_f -> 1024 -> 256 -> 3 with GeLU between layers.
inline constexpr std::array<std::size_t, 2> kHeadHidden = {1024, 256};

struct ModelConfig {
    std::size_t embedding_dim = 512;  // D, width of each modality embedding
    std::size_t fused_dim = 512;      // D_f, width of the fused representation
    double dropout_rate = 0.2;

    std::uint64_t hash() const {
        std::string key = "D=" + std::to_string(embedding_dim) +
                          "|D_f=" + std::to_string(fused_dim) +
                          "|dropout=" + std::to_string(dropout_rate);
        return fnv1a64(key);
    }
};

/// One sample with both modalities resolved (a missing modality has already
/// been replaced by the dataset's blank embedding).
struct ModalityInput {
    std::vector<double> image_embedding;
    std::vector<double> text_embedding;
};

/// A minibatch in matrix form: one row per sample.
struct Batch {
    Matrix image;  // B x D
    Matrix text;   // B x D
    std::vector<int> labels;

    static Batch from_inputs(const std::vector<ModalityInput>& inputs,
                             const std::vector<int>& labels) {
        if (inputs.empty()) throw std::invalid_argument("Batch: empty input list");
        const std::size_t dim = inputs.front().image_embedding.size();
        Batch b;
        b.image = Matrix(inputs.size(), dim);
        b.text = Matrix(inputs.size(), dim);
        b.labels = labels;
        for (std::size_t i = 0; i < inputs.size(); ++i) {
            if (inputs[i].image_embedding.size() != dim ||
                inputs[i].text_embedding.size() != dim)
                throw std::invalid_argument("Batch: inconsistent embedding widths");
            std::copy(inputs[i].image_embedding.begin(), inputs[i].image_embedding.end(),
                      b.image.row(i));
            std::copy(inputs[i].text_embedding.begin(), inputs[i].text_embedding.end(),
                      b.text.row(i));
        }
        return b;
    }
};

struct DenseLayer {
    ParamTensor w;
    ParamTensor b;
};

/// Dense stack with GeLU between internal layers; the last layer is linear.
struct DenseStack {
    std::vector<DenseLayer> layers;
};

struct ModelParameters {
    ModelConfig config;

    DenseLayer image_adapter;  // D -> D, identity at init
    DenseLayer text_adapter;   // D -> D
    DenseStack attn_image;     // D -> 256 -> 64 -> 8 -> 1
    DenseStack attn_text;
    DenseLayer fusion_gate;  // 2 -> 2 (W_f, b_f)
    DenseLayer fusion_proj;  // 2D -> D_f (W_r, b_r)
    DenseStack head;         // D_f -> 1024 -> 256 -> 3
    NormState norm_image;
    NormState norm_text;
    NormState norm_fused;

    template <typename Fn>
    void for_each_tensor(Fn&& fn) {
        fn("image_adapter.w", image_adapter.w);
        fn("image_adapter.b", image_adapter.b);
        fn("text_adapter.w", text_adapter.w);
        fn("text_adapter.b", text_adapter.b);
        for (std::size_t i = 0; i < attn_image.layers.size(); ++i) {
            fn("attn_image." + std::to_string(i) + ".w", attn_image.layers[i].w);
            fn("attn_image." + std::to_string(i) + ".b", attn_image.layers[i].b);
        }
        for (std::size_t i = 0; i < attn_text.layers.size(); ++i) {
            fn("attn_text." + std::to_string(i) + ".w", attn_text.layers[i].w);
            fn("attn_text." + std::to_string(i) + ".b", attn_text.layers[i].b);
        }
        fn("fusion_gate.w", fusion_gate.w);
        fn("fusion_gate.b", fusion_gate.b);
        fn("fusion_proj.w", fusion_proj.w);
        fn("fusion_proj.b", fusion_proj.b);
        for (std::size_t i = 0; i < head.layers.size(); ++i) {
            fn("head." + std::to_string(i) + ".w", head.layers[i].w);
            fn("head." + std::to_string(i) + ".b", head.layers[i].b);
        }
        fn("norm_image.gamma", norm_image.gamma);
        fn("norm_image.beta", norm_image.beta);
        fn("norm_text.gamma", norm_text.gamma);
        fn("norm_text.beta", norm_text.beta);
        fn("norm_fused.gamma", norm_fused.gamma);
        fn("norm_fused.beta", norm_fused.beta);
    }

    /// Non-trainable persistent state (batch-norm running statistics).
    template <typename Fn>
    void for_each_state(Fn&& fn) {
        fn("norm_image.running_mean", norm_image.running_mean);
        fn("norm_image.running_var", norm_image.running_var);
        fn("norm_text.running_mean", norm_text.running_mean);
        fn("norm_text.running_var", norm_text.running_var);
        fn("norm_fused.running_mean", norm_fused.running_mean);
        fn("norm_fused.running_var", norm_fused.running_var);
    }

    void zero_grad() {
        for_each_tensor([](const std::string&, ParamTensor& t) { t.zero_grad(); });
    }
};

struct FreezeSpec {
    bool freeze_image_adapter = false;
    bool freeze_text_adapter = false;
};

inline void set_freeze(ModelParameters& params, const FreezeSpec& spec) {
    params.image_adapter.w.trainable = !spec.freeze_image_adapter;
    params.image_adapter.b.trainable = !spec.freeze_image_adapter;
    params.text_adapter.w.trainable = !spec.freeze_text_adapter;
    params.text_adapter.b.trainable = !spec.freeze_text_adapter;
}

namespace detail {

inline DenseLayer make_layer(std::size_t fan_in, std::size_t fan_out, DeterministicRng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    DenseLayer layer{ParamTensor(fan_in, fan_out), ParamTensor(1, fan_out)};
    for (double& v : layer.w.value.data) v = rng.uniform(-bound, bound);
    for (double& v : layer.b.value.data) v = rng.uniform(-bound, bound);
    return layer;
}

inline DenseStack make_stack(std::size_t input_dim, const std::vector<std::size_t>& sizes,
                             DeterministicRng& rng) {
    DenseStack stack;
    std::size_t fan_in = input_dim;
    for (std::size_t out : sizes) {
        stack.layers.push_back(make_layer(fan_in, out, rng));
        fan_in = out;
    }
    return stack;
}

}  // namespace detail

/// Fresh model: fusion and head weights from uniform(-1/sqrt(fan_in), +...),
/// adapters at exact identity so untrained adapters pass embeddings through
/// unchanged, norm states at gamma=1/beta=0 with running mean 0, var 1.
inline ModelParameters init_model(const ModelConfig& config, DeterministicRng& rng) {
    if (config.embedding_dim < 1 || config.fused_dim < 1)
        throw std::invalid_argument("init_model: dims must be >= 1");
    if (config.dropout_rate < 0.0 || config.dropout_rate >= 1.0)
        throw std::invalid_argument("init_model: dropout rate must be in [0, 1)");

    const std::size_t d = config.embedding_dim;
    const std::size_t df = config.fused_dim;
    ModelParameters p;
    p.config = config;

    p.image_adapter = DenseLayer{ParamTensor(Matrix::identity(d)), ParamTensor(1, d)};
    p.text_adapter = DenseLayer{ParamTensor(Matrix::identity(d)), ParamTensor(1, d)};

    const std::vector<std::size_t> attn_sizes = {kAttnHidden[0], kAttnHidden[1], kAttnHidden[2],
                                                 1};
    p.attn_image = detail::make_stack(d, attn_sizes, rng);
    p.attn_text = detail::make_stack(d, attn_sizes, rng);
    p.fusion_gate = detail::make_layer(2, 2, rng);
    p.fusion_proj = detail::make_layer(2 * d, df, rng);
    p.head = detail::make_stack(df, {kHeadHidden[0], kHeadHidden[1], kNumClasses}, rng);

    p.norm_image = NormState(d);
    p.norm_text = NormState(d);
    p.norm_fused = NormState(df);
    return p;
}

struct StackCache {
    std::vector<Matrix> inputs;   // input to each layer
    std::vector<Matrix> preacts;  // pre-activation output of each layer
    Matrix output;
};

namespace detail {

inline void stack_forward(const DenseStack& stack, const Matrix& x, StackCache& cache) {
    cache.inputs.clear();
    cache.preacts.clear();
    Matrix cur = x;
    for (std::size_t i = 0; i < stack.layers.size(); ++i) {
        cache.inputs.push_back(cur);
        Matrix z = affine_forward(cur, stack.layers[i].w, stack.layers[i].b);
        cache.preacts.push_back(z);
        cur = (i + 1 < stack.layers.size()) ? gelu(z) : z;  // last layer linear
    }
    cache.output = cur;
}

inline Matrix stack_backward(DenseStack& stack, const StackCache& cache, const Matrix& d_out) {
    Matrix d = d_out;
    for (std::size_t i = stack.layers.size(); i-- > 0;) {
        if (i + 1 < stack.layers.size()) d = gelu_backward(cache.preacts[i], d);
        d = affine_backward(cache.inputs[i], stack.layers[i].w, stack.layers[i].b, d);
    }
    return d;
}

}  // namespace detail

/// Every intermediate of one forward pass, in architecture order, plus the
/// caches backward needs. Names follow the roles: modality features, fused
/// representation, gate scores, head activations.
struct ForwardTrace {
    Mode mode = Mode::Eval;
    const ModelParameters* source = nullptr;

    Matrix input_image, input_text;      // resolved embeddings, B x D
    Matrix image_feat, text_feat;        // F_I, F_T: adapter outputs
    Matrix image_norm, text_norm;        // f_I, f_T: post dropout+norm
    Matrix attn_image_score, attn_text_score;  // D_i, D_t: stack scalars, B x 1
    Matrix gate_scores;                  // [s_i, s_t], B x 2, rows sum to 1
    Matrix shifted_scores;               // [S_i, S_t] = 1 + gate_scores
    Matrix fused;                        // F_MM = tanh(...), B x D_f
    Matrix fused_norm;                   // f_MM: post dropout+norm
    Matrix head_hidden;                  // X_MM: second head activation, B x 256
    Matrix logits;                       // B x 3

    // backward caches
    Matrix drop_image_mask, drop_text_mask, drop_fused_mask;
    BatchNormCache bn_image, bn_text, bn_fused;
    StackCache attn_image_cache, attn_text_cache;
    Matrix score_pair;    // [D_i || D_t], B x 2
    Matrix gate_preact;   // W_f [D_i, D_t] + b_f
    Matrix scaled_concat; // [S_i * f_I || S_t * f_T], B x 2D
    Matrix head_z1, head_a1, head_z2;  // head pre/post activations

    double gate_score_image(std::size_t row = 0) const { return gate_scores(row, 0); }
    double gate_score_text(std::size_t row = 0) const { return gate_scores(row, 1); }
};

inline ForwardTrace forward(ModelParameters& params, const Batch& batch, Mode mode,
                            DeterministicRng& rng) {
    const std::size_t d = params.config.embedding_dim;
    if (batch.image.cols != d || batch.text.cols != d)
        throw std::invalid_argument("forward: batch width " + batch.image.shape_str() +
                                    " does not match model D=" + std::to_string(d));
    const double rate = params.config.dropout_rate;

    ForwardTrace t;
    t.mode = mode;
    t.source = &params;
    t.input_image = batch.image;
    t.input_text = batch.text;

    t.image_feat = affine_forward(batch.image, params.image_adapter.w, params.image_adapter.b);
    t.text_feat = affine_forward(batch.text, params.text_adapter.w, params.text_adapter.b);

    auto drop_i = dropout_forward(t.image_feat, rate, mode, rng);
    t.drop_image_mask = std::move(drop_i.mask);
    t.image_norm = batch_norm_forward(drop_i.output, params.norm_image, mode, t.bn_image);

    auto drop_t = dropout_forward(t.text_feat, rate, mode, rng);
    t.drop_text_mask = std::move(drop_t.mask);
    t.text_norm = batch_norm_forward(drop_t.output, params.norm_text, mode, t.bn_text);

    detail::stack_forward(params.attn_image, t.image_norm, t.attn_image_cache);
    detail::stack_forward(params.attn_text, t.text_norm, t.attn_text_cache);
    t.attn_image_score = t.attn_image_cache.output;
    t.attn_text_score = t.attn_text_cache.output;

    t.score_pair = concat_cols(t.attn_image_score, t.attn_text_score);
    t.gate_preact = affine_forward(t.score_pair, params.fusion_gate.w, params.fusion_gate.b);
    t.gate_scores = softmax_row(t.gate_preact);

    t.shifted_scores = Matrix(t.gate_scores.rows, 2);
    for (std::size_t r = 0; r < t.gate_scores.rows; ++r) {
        const double sum = t.gate_scores(r, 0) + t.gate_scores(r, 1);
        if (std::abs(sum - 1.0) > 1e-12)
            throw std::runtime_error("forward: gate scores do not sum to 1 (got " +
                                     std::to_string(sum) + ")");
        t.shifted_scores(r, 0) = 1.0 + t.gate_scores(r, 0);
        t.shifted_scores(r, 1) = 1.0 + t.gate_scores(r, 1);
    }

    Matrix scaled_image(t.image_norm.rows, d);
    Matrix scaled_text(t.text_norm.rows, d);
    for (std::size_t r = 0; r < t.image_norm.rows; ++r) {
        const double si = t.shifted_scores(r, 0);
        const double st = t.shifted_scores(r, 1);
        for (std::size_t c = 0; c < d; ++c) {
            scaled_image(r, c) = si * t.image_norm(r, c);
            scaled_text(r, c) = st * t.text_norm(r, c);
        }
    }
    t.scaled_concat = concat_cols(scaled_image, scaled_text);
    t.fused = tanh_act(
        affine_forward(t.scaled_concat, params.fusion_proj.w, params.fusion_proj.b));

    auto drop_m = dropout_forward(t.fused, rate, mode, rng);
    t.drop_fused_mask = std::move(drop_m.mask);
    t.fused_norm = batch_norm_forward(drop_m.output, params.norm_fused, mode, t.bn_fused);

    t.head_z1 = affine_forward(t.fused_norm, params.head.layers[0].w, params.head.layers[0].b);
    t.head_a1 = gelu(t.head_z1);
    t.head_z2 = affine_forward(t.head_a1, params.head.layers[1].w, params.head.layers[1].b);
    t.head_hidden = gelu(t.head_z2);
    t.logits = affine_forward(t.head_hidden, params.head.layers[2].w, params.head.layers[2].b);
    return t;
}

/// Accumulates exact gradients for all trainable tensors from dL/dlogits.
/// The trace must come from a train-mode forward over the same parameters.
inline void backward(ModelParameters& params, const ForwardTrace& trace,
                     const Matrix& d_logits) {
    if (trace.source != &params)
        throw std::logic_error("backward: trace was not produced by these parameters");
    if (trace.mode != Mode::Train)
        throw std::logic_error("backward: trace must come from a train-mode forward");
    trace.logits.require_same_shape(d_logits, "backward");

    const std::size_t d = params.config.embedding_dim;
    const std::size_t batch = d_logits.rows;

    // head
    Matrix d_hidden = affine_backward(trace.head_hidden, params.head.layers[2].w,
                                      params.head.layers[2].b, d_logits);
    Matrix d_z2 = gelu_backward(trace.head_z2, d_hidden);
    Matrix d_a1 = affine_backward(trace.head_a1, params.head.layers[1].w,
                                  params.head.layers[1].b, d_z2);
    Matrix d_z1 = gelu_backward(trace.head_z1, d_a1);
    Matrix d_fused_norm = affine_backward(trace.fused_norm, params.head.layers[0].w,
                                          params.head.layers[0].b, d_z1);

    // fused dropout+norm, then tanh
    Matrix d_fused_drop = batch_norm_backward(trace.bn_fused, params.norm_fused, d_fused_norm);
    Matrix d_fused = dropout_backward(trace.drop_fused_mask, d_fused_drop);
    Matrix d_proj = tanh_backward(trace.fused, d_fused);
    Matrix d_concat =
        affine_backward(trace.scaled_concat, params.fusion_proj.w, params.fusion_proj.b, d_proj);

    // split the concat gradient and undo the score scaling
    Matrix d_image_norm(batch, d);
    Matrix d_text_norm(batch, d);
    Matrix d_shifted(batch, 2);
    for (std::size_t r = 0; r < batch; ++r) {
        const double si = trace.shifted_scores(r, 0);
        const double st = trace.shifted_scores(r, 1);
        double dsi = 0.0, dst = 0.0;
        for (std::size_t c = 0; c < d; ++c) {
            const double dgi = d_concat(r, c);
            const double dgt = d_concat(r, d + c);
            d_image_norm(r, c) = dgi * si;
            d_text_norm(r, c) = dgt * st;
            dsi += dgi * trace.image_norm(r, c);
            dst += dgt * trace.text_norm(r, c);
        }
        d_shifted(r, 0) = dsi;  // dS/ds = 1
        d_shifted(r, 1) = dst;
    }

    // gate: softmax, then the 2x2 affine over the stacked scalars
    Matrix d_gate_pre = softmax_row_backward(trace.gate_scores, d_shifted);
    Matrix d_score_pair =
        affine_backward(trace.score_pair, params.fusion_gate.w, params.fusion_gate.b, d_gate_pre);

    // attention stacks; their input gradient joins the fusion path into f_I/f_T
    Matrix d_attn_image_in = detail::stack_backward(
        params.attn_image, trace.attn_image_cache, slice_cols(d_score_pair, 0, 1));
    Matrix d_attn_text_in = detail::stack_backward(
        params.attn_text, trace.attn_text_cache, slice_cols(d_score_pair, 1, 1));
    d_image_norm.add_inplace(d_attn_image_in);
    d_text_norm.add_inplace(d_attn_text_in);

    // per-modality norm, dropout, adapter
    Matrix d_image_drop = batch_norm_backward(trace.bn_image, params.norm_image, d_image_norm);
    Matrix d_image_feat = dropout_backward(trace.drop_image_mask, d_image_drop);
    affine_backward_params(trace.input_image, params.image_adapter.w, params.image_adapter.b,
                           d_image_feat);

    Matrix d_text_drop = batch_norm_backward(trace.bn_text, params.norm_text, d_text_norm);
    Matrix d_text_feat = dropout_backward(trace.drop_text_mask, d_text_drop);
    affine_backward_params(trace.input_text, params.text_adapter.w, params.text_adapter.b,
                           d_text_feat);
}

inline std::vector<int> predict(const ForwardTrace& trace) {
    std::vector<int> preds(trace.logits.rows);
    for (std::size_t r = 0; r < trace.logits.rows; ++r) {
        const double* row = trace.logits.row(r);
        int best = 0;
        for (std::size_t c = 1; c < trace.logits.cols; ++c)
            if (row[c] > row[best]) best = static_cast<int>(c);
        preds[r] = best;
    }
    return preds;
}

}  // namespace stilt
