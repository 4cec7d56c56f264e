#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "stilt/matrix.hpp"
#include "stilt/param.hpp"
#include "stilt/rng.hpp"

namespace stilt {

enum class Mode { Train, Eval };

// ---------------------------------------------------------------------------
// Affine: y = x W + b, W is in_features x out_features, b is 1 x out_features.
// ---------------------------------------------------------------------------

inline Matrix affine_forward(const Matrix& x, const ParamTensor& w, const ParamTensor& b) {
    if (x.cols != w.value.rows)
        throw std::invalid_argument("affine: input " + x.shape_str() + " does not match weight " +
                                    w.value.shape_str());
    if (b.value.rows != 1 || b.value.cols != w.value.cols)
        throw std::invalid_argument("affine: bias " + b.value.shape_str() +
                                    " does not match weight " + w.value.shape_str());
    Matrix y = matmul(x, w.value);
    for (std::size_t r = 0; r < y.rows; ++r) {
        double* yrow = y.row(r);
        const double* brow = b.value.row(0);
        for (std::size_t c = 0; c < y.cols; ++c) yrow[c] += brow[c];
    }
    return y;
}

/// Accumulates dL/dW and dL/db. `x` must be the forward input.
inline void affine_backward_params(const Matrix& x, ParamTensor& w, ParamTensor& b,
                                   const Matrix& d_out) {
    if (w.trainable) w.accumulate_grad(matmul_tn(x, d_out));
    if (b.trainable) {
        Matrix db(1, d_out.cols);
        for (std::size_t r = 0; r < d_out.rows; ++r) {
            const double* drow = d_out.row(r);
            for (std::size_t c = 0; c < d_out.cols; ++c) db(0, c) += drow[c];
        }
        b.accumulate_grad(db);
    }
}

/// Same, and returns dL/dx for the layers below.
inline Matrix affine_backward(const Matrix& x, ParamTensor& w, ParamTensor& b,
                              const Matrix& d_out) {
    affine_backward_params(x, w, b, d_out);
    return matmul_nt(d_out, w.value);
}

// ---------------------------------------------------------------------------
// Activations. GeLU uses the exact Gaussian-CDF form.
// ---------------------------------------------------------------------------

inline double gelu_scalar(double x) {
    return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2));
}

inline double gelu_grad_scalar(double x) {
    const double cdf = 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2));
    const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
    return cdf + x * pdf;
}

inline Matrix gelu(const Matrix& x) {
    Matrix y(x.rows, x.cols);
    for (std::size_t i = 0; i < x.size(); ++i) y.data[i] = gelu_scalar(x.data[i]);
    return y;
}

/// dL/dx from the forward *input* x.
inline Matrix gelu_backward(const Matrix& x, const Matrix& d_out) {
    x.require_same_shape(d_out, "gelu_backward");
    Matrix dx(x.rows, x.cols);
    for (std::size_t i = 0; i < x.size(); ++i)
        dx.data[i] = d_out.data[i] * gelu_grad_scalar(x.data[i]);
    return dx;
}

inline Matrix tanh_act(const Matrix& x) {
    Matrix y(x.rows, x.cols);
    for (std::size_t i = 0; i < x.size(); ++i) y.data[i] = std::tanh(x.data[i]);
    return y;
}

/// dL/dx from the forward *output* y = tanh(x).
inline Matrix tanh_backward(const Matrix& y, const Matrix& d_out) {
    y.require_same_shape(d_out, "tanh_backward");
    Matrix dx(y.rows, y.cols);
    for (std::size_t i = 0; i < y.size(); ++i)
        dx.data[i] = d_out.data[i] * (1.0 - y.data[i] * y.data[i]);
    return dx;
}

/// Row-wise softmax with max subtraction.
inline Matrix softmax_row(const Matrix& x) {
    Matrix y(x.rows, x.cols);
    for (std::size_t r = 0; r < x.rows; ++r) {
        const double* xrow = x.row(r);
        double* yrow = y.row(r);
        double mx = xrow[0];
        for (std::size_t c = 1; c < x.cols; ++c) mx = std::max(mx, xrow[c]);
        double sum = 0.0;
        for (std::size_t c = 0; c < x.cols; ++c) {
            yrow[c] = std::exp(xrow[c] - mx);
            sum += yrow[c];
        }
        for (std::size_t c = 0; c < x.cols; ++c) yrow[c] /= sum;
    }
    return y;
}

/// dL/dx from the forward *output* y: dx = y .* (dy - sum(dy .* y)).
inline Matrix softmax_row_backward(const Matrix& y, const Matrix& d_out) {
    y.require_same_shape(d_out, "softmax_row_backward");
    Matrix dx(y.rows, y.cols);
    for (std::size_t r = 0; r < y.rows; ++r) {
        const double* yrow = y.row(r);
        const double* drow = d_out.row(r);
        double dot = 0.0;
        for (std::size_t c = 0; c < y.cols; ++c) dot += drow[c] * yrow[c];
        double* out = dx.row(r);
        for (std::size_t c = 0; c < y.cols; ++c) out[c] = yrow[c] * (drow[c] - dot);
    }
    return dx;
}

// ---------------------------------------------------------------------------
// Dropout (inverted: survivors scaled by 1/(1-rate) at train time).
// ---------------------------------------------------------------------------

struct DropoutResult {
    Matrix output;
    Matrix mask;  // scale factors, reused verbatim in backward
};

inline DropoutResult dropout_forward(const Matrix& x, double rate, Mode mode,
                                     DeterministicRng& rng) {
    if (rate < 0.0 || rate >= 1.0)
        throw std::invalid_argument("dropout: rate must be in [0, 1), got " +
                                    std::to_string(rate));
    DropoutResult res;
    if (mode == Mode::Eval || rate == 0.0) {
        res.output = x;
        res.mask = Matrix(x.rows, x.cols, 1.0);
        return res;
    }
    const double keep_scale = 1.0 / (1.0 - rate);
    res.mask = Matrix(x.rows, x.cols);
    res.output = Matrix(x.rows, x.cols);
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double m = rng.bernoulli(rate) ? 0.0 : keep_scale;
        res.mask.data[i] = m;
        res.output.data[i] = x.data[i] * m;
    }
    return res;
}

inline Matrix dropout_backward(const Matrix& mask, const Matrix& d_out) {
    mask.require_same_shape(d_out, "dropout_backward");
    Matrix dx(d_out.rows, d_out.cols);
    for (std::size_t i = 0; i < d_out.size(); ++i) dx.data[i] = d_out.data[i] * mask.data[i];
    return dx;
}

// ---------------------------------------------------------------------------
// Batch normalization over columns (features), momentum 0.1, eps 1e-5.
// Train mode uses biased batch variance for normalization and keeps the
// unbiased estimate in the running statistics.
// ---------------------------------------------------------------------------

struct NormState {
    ParamTensor gamma;  // 1 x D
    ParamTensor beta;   // 1 x D
    Matrix running_mean;
    Matrix running_var;
    double eps = 1e-5;
    double momentum = 0.1;

    NormState() = default;
    explicit NormState(std::size_t dim)
        : gamma(Matrix(1, dim, 1.0)),
          beta(Matrix(1, dim, 0.0)),
          running_mean(1, dim, 0.0),
          running_var(1, dim, 1.0) {}
};

struct BatchNormCache {
    Matrix xhat;     // normalized input, before gamma/beta
    Matrix inv_std;  // 1 x D
    Mode mode = Mode::Train;
};

inline Matrix batch_norm_forward(const Matrix& x, NormState& state, Mode mode,
                                 BatchNormCache& cache) {
    const std::size_t batch = x.rows;
    const std::size_t dim = x.cols;
    if (dim != state.gamma.value.cols)
        throw std::invalid_argument("batch_norm: input " + x.shape_str() +
                                    " does not match state width " +
                                    std::to_string(state.gamma.value.cols));
    if (mode == Mode::Train && batch < 2)
        throw std::invalid_argument("batch_norm: train mode needs batch >= 2, got " +
                                    std::to_string(batch));

    cache.mode = mode;
    cache.xhat = Matrix(batch, dim);
    cache.inv_std = Matrix(1, dim);
    Matrix y(batch, dim);

    if (mode == Mode::Train) {
        for (std::size_t j = 0; j < dim; ++j) {
            double mean = 0.0;
            for (std::size_t i = 0; i < batch; ++i) mean += x(i, j);
            mean /= static_cast<double>(batch);
            double var = 0.0;
            for (std::size_t i = 0; i < batch; ++i) {
                const double d = x(i, j) - mean;
                var += d * d;
            }
            var /= static_cast<double>(batch);
            const double inv = 1.0 / std::sqrt(var + state.eps);
            cache.inv_std(0, j) = inv;
            for (std::size_t i = 0; i < batch; ++i) {
                const double xh = (x(i, j) - mean) * inv;
                cache.xhat(i, j) = xh;
                y(i, j) = state.gamma.value(0, j) * xh + state.beta.value(0, j);
            }
            const double unbiased =
                var * static_cast<double>(batch) / static_cast<double>(batch - 1);
            state.running_mean(0, j) =
                (1.0 - state.momentum) * state.running_mean(0, j) + state.momentum * mean;
            state.running_var(0, j) =
                (1.0 - state.momentum) * state.running_var(0, j) + state.momentum * unbiased;
        }
    } else {
        for (std::size_t j = 0; j < dim; ++j) {
            const double inv = 1.0 / std::sqrt(state.running_var(0, j) + state.eps);
            cache.inv_std(0, j) = inv;
            for (std::size_t i = 0; i < batch; ++i) {
                const double xh = (x(i, j) - state.running_mean(0, j)) * inv;
                cache.xhat(i, j) = xh;
                y(i, j) = state.gamma.value(0, j) * xh + state.beta.value(0, j);
            }
        }
    }
    return y;
}

/// Exact backward through the batch statistics (train) or the fixed running
/// statistics (eval). Accumulates into gamma/beta grads, returns dL/dx.
inline Matrix batch_norm_backward(const BatchNormCache& cache, NormState& state,
                                  const Matrix& d_out) {
    const std::size_t batch = d_out.rows;
    const std::size_t dim = d_out.cols;
    cache.xhat.require_same_shape(d_out, "batch_norm_backward");

    Matrix dgamma(1, dim);
    Matrix dbeta(1, dim);
    Matrix dx(batch, dim);
    const double inv_batch = 1.0 / static_cast<double>(batch);

    for (std::size_t j = 0; j < dim; ++j) {
        double sum_d = 0.0;
        double sum_dx = 0.0;
        for (std::size_t i = 0; i < batch; ++i) {
            sum_d += d_out(i, j);
            sum_dx += d_out(i, j) * cache.xhat(i, j);
        }
        dbeta(0, j) = sum_d;
        dgamma(0, j) = sum_dx;

        const double g = state.gamma.value(0, j);
        const double inv = cache.inv_std(0, j);
        if (cache.mode == Mode::Train) {
            for (std::size_t i = 0; i < batch; ++i) {
                dx(i, j) = g * inv *
                           (d_out(i, j) - inv_batch * sum_d -
                            cache.xhat(i, j) * inv_batch * sum_dx);
            }
        } else {
            for (std::size_t i = 0; i < batch; ++i) dx(i, j) = g * inv * d_out(i, j);
        }
    }
    state.gamma.accumulate_grad(dgamma);
    state.beta.accumulate_grad(dbeta);
    return dx;
}

}  // namespace stilt
