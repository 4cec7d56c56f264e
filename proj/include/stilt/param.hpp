#pragma once

#include "stilt/matrix.hpp"

namespace stilt {

/// A weight matrix with its gradient accumulator. Backward passes accumulate
/// into grad only while trainable; a frozen tensor keeps an all-zero grad
/// and is skipped by the optimizer.
struct ParamTensor {
    Matrix value;
    Matrix grad;
    bool trainable = true;

    ParamTensor() = default;
    explicit ParamTensor(Matrix v, bool train = true)
        : value(std::move(v)), grad(value.rows, value.cols), trainable(train) {}
    ParamTensor(std::size_t rows, std::size_t cols, bool train = true)
        : value(rows, cols), grad(rows, cols), trainable(train) {}

    void zero_grad() { grad.fill(0.0); }

    void accumulate_grad(const Matrix& g) {
        if (!trainable) return;
        grad.add_inplace(g);
    }
};

}  // namespace stilt
