#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace stilt {

/// Dense row-major matrix of 64-bit floats. The only tensor carrier in the
/// project; vectors are 1xN or Nx1 matrices.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, double fill = 0.0)
        : rows(r), cols(c), data(r * c, fill) {}

    static Matrix identity(std::size_t n) {
        Matrix m(n, n);
        for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
        return m;
    }

    double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

    double* row(std::size_t r) { return data.data() + r * cols; }
    const double* row(std::size_t r) const { return data.data() + r * cols; }

    std::size_t size() const { return data.size(); }
    bool same_shape(const Matrix& other) const {
        return rows == other.rows && cols == other.cols;
    }
    std::string shape_str() const {
        return std::to_string(rows) + "x" + std::to_string(cols);
    }

    void fill(double v) { std::fill(data.begin(), data.end(), v); }

    void add_inplace(const Matrix& other) {
        require_same_shape(other, "add");
        for (std::size_t i = 0; i < data.size(); ++i) data[i] += other.data[i];
    }

    bool all_finite() const {
        for (double v : data)
            if (!std::isfinite(v)) return false;
        return true;
    }

    void require_finite(const std::string& what) const {
        if (!all_finite())
            throw std::runtime_error(what + ": non-finite entries in " + shape_str() + " matrix");
    }

    void require_same_shape(const Matrix& other, const std::string& op) const {
        if (!same_shape(other))
            throw std::invalid_argument(op + ": shape mismatch " + shape_str() + " vs " +
                                        other.shape_str());
    }
};

/// C = A * B, cache-friendly ikj order.
inline Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols != b.rows)
        throw std::invalid_argument("matmul: shape mismatch " + a.shape_str() + " vs " +
                                    b.shape_str());
    Matrix c(a.rows, b.cols);
    for (std::size_t i = 0; i < a.rows; ++i) {
        double* crow = c.row(i);
        const double* arow = a.row(i);
        for (std::size_t k = 0; k < a.cols; ++k) {
            const double aik = arow[k];
            const double* brow = b.row(k);
            for (std::size_t j = 0; j < b.cols; ++j) crow[j] += aik * brow[j];
        }
    }
    return c;
}

/// C = A^T * B (A is KxM, B is KxN, C is MxN). Used for weight gradients.
inline Matrix matmul_tn(const Matrix& a, const Matrix& b) {
    if (a.rows != b.rows)
        throw std::invalid_argument("matmul_tn: shape mismatch " + a.shape_str() + " vs " +
                                    b.shape_str());
    Matrix c(a.cols, b.cols);
    for (std::size_t k = 0; k < a.rows; ++k) {
        const double* arow = a.row(k);
        const double* brow = b.row(k);
        for (std::size_t i = 0; i < a.cols; ++i) {
            const double aki = arow[i];
            double* crow = c.row(i);
            for (std::size_t j = 0; j < b.cols; ++j) crow[j] += aki * brow[j];
        }
    }
    return c;
}

/// C = A * B^T (A is MxK, B is NxK, C is MxN). Used for input gradients.
inline Matrix matmul_nt(const Matrix& a, const Matrix& b) {
    if (a.cols != b.cols)
        throw std::invalid_argument("matmul_nt: shape mismatch " + a.shape_str() + " vs " +
                                    b.shape_str());
    Matrix c(a.rows, b.rows);
    for (std::size_t i = 0; i < a.rows; ++i) {
        const double* arow = a.row(i);
        double* crow = c.row(i);
        for (std::size_t j = 0; j < b.rows; ++j) {
            const double* brow = b.row(j);
            double acc = 0.0;
            for (std::size_t k = 0; k < a.cols; ++k) acc += arow[k] * brow[k];
            crow[j] = acc;
        }
    }
    return c;
}

inline Matrix concat_cols(const Matrix& left, const Matrix& right) {
    if (left.rows != right.rows)
        throw std::invalid_argument("concat_cols: row mismatch " + left.shape_str() + " vs " +
                                    right.shape_str());
    Matrix out(left.rows, left.cols + right.cols);
    for (std::size_t r = 0; r < left.rows; ++r) {
        const double* lrow = left.row(r);
        const double* rrow = right.row(r);
        double* orow = out.row(r);
        std::copy(lrow, lrow + left.cols, orow);
        std::copy(rrow, rrow + right.cols, orow + left.cols);
    }
    return out;
}

inline Matrix slice_cols(const Matrix& m, std::size_t begin, std::size_t count) {
    if (begin + count > m.cols)
        throw std::invalid_argument("slice_cols: out of range on " + m.shape_str());
    Matrix out(m.rows, count);
    for (std::size_t r = 0; r < m.rows; ++r) {
        const double* src = m.row(r) + begin;
        std::copy(src, src + count, out.row(r));
    }
    return out;
}

}  // namespace stilt
