#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace vfl {

// Dense row-major matrix of doubles; the single numeric carrier for data
// batches, embeddings, gradients and model parameters.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data; // rows * cols, row-major

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, double fill = 0.0)
        : rows(r), cols(c), data(r * c, fill) {}

    double& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }

    std::span<double> row(std::size_t i) { return {data.data() + i * cols, cols}; }
    std::span<const double> row(std::size_t i) const { return {data.data() + i * cols, cols}; }

    bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }
    bool empty() const { return data.empty(); }
    bool all_finite() const;
};

// a(r,k) * b(k,c) -> (r,c)
Matrix matmul(const Matrix& a, const Matrix& b);
// a(r,k)^T * b(r,c) -> (k,c)
Matrix matmul_at_b(const Matrix& a, const Matrix& b);
// a(r,k) * b(c,k)^T -> (r,c)
Matrix matmul_a_bt(const Matrix& a, const Matrix& b);

Matrix concat_cols(const std::vector<Matrix>& blocks);
std::vector<Matrix> split_cols(const Matrix& m, const std::vector<std::size_t>& widths);
Matrix gather_rows(const Matrix& m, std::span<const int> row_ids);

double l2_norm(std::span<const double> v);

} // namespace vfl
