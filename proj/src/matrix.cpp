#include "vfl/matrix.hpp"

#include <cmath>
#include <string>

#include "vfl/errors.hpp"

namespace vfl {

bool Matrix::all_finite() const {
    for (double v : data) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols != b.rows) {
        throw ShapeError("matmul: " + std::to_string(a.rows) + "x" + std::to_string(a.cols) +
                         " * " + std::to_string(b.rows) + "x" + std::to_string(b.cols));
    }
    Matrix c(a.rows, b.cols);
    for (std::size_t i = 0; i < a.rows; ++i) {
        const double* arow = a.data.data() + i * a.cols;
        double* crow = c.data.data() + i * c.cols;
        for (std::size_t k = 0; k < a.cols; ++k) {
            const double aik = arow[k];
            const double* brow = b.data.data() + k * b.cols;
            for (std::size_t j = 0; j < b.cols; ++j) crow[j] += aik * brow[j];
        }
    }
    return c;
}

Matrix matmul_at_b(const Matrix& a, const Matrix& b) {
    if (a.rows != b.rows) {
        throw ShapeError("matmul_at_b: row counts differ (" + std::to_string(a.rows) + " vs " +
                         std::to_string(b.rows) + ")");
    }
    Matrix c(a.cols, b.cols);
    for (std::size_t s = 0; s < a.rows; ++s) {
        const double* arow = a.data.data() + s * a.cols;
        const double* brow = b.data.data() + s * b.cols;
        for (std::size_t i = 0; i < a.cols; ++i) {
            const double asi = arow[i];
            double* crow = c.data.data() + i * c.cols;
            for (std::size_t j = 0; j < b.cols; ++j) crow[j] += asi * brow[j];
        }
    }
    return c;
}

Matrix matmul_a_bt(const Matrix& a, const Matrix& b) {
    if (a.cols != b.cols) {
        throw ShapeError("matmul_a_bt: inner dims differ (" + std::to_string(a.cols) + " vs " +
                         std::to_string(b.cols) + ")");
    }
    Matrix c(a.rows, b.rows);
    for (std::size_t i = 0; i < a.rows; ++i) {
        const double* arow = a.data.data() + i * a.cols;
        double* crow = c.data.data() + i * c.cols;
        for (std::size_t j = 0; j < b.rows; ++j) {
            const double* brow = b.data.data() + j * b.cols;
            double acc = 0.0;
            for (std::size_t k = 0; k < a.cols; ++k) acc += arow[k] * brow[k];
            crow[j] = acc;
        }
    }
    return c;
}

Matrix concat_cols(const std::vector<Matrix>& blocks) {
    if (blocks.empty()) return {};
    std::size_t rows = blocks[0].rows;
    std::size_t cols = 0;
    for (const Matrix& b : blocks) {
        if (b.rows != rows) throw ShapeError("concat_cols: blocks differ in row count");
        cols += b.cols;
    }
    Matrix out(rows, cols);
    for (std::size_t i = 0; i < rows; ++i) {
        double* dst = out.data.data() + i * cols;
        for (const Matrix& b : blocks) {
            const double* src = b.data.data() + i * b.cols;
            for (std::size_t j = 0; j < b.cols; ++j) *dst++ = src[j];
        }
    }
    return out;
}

std::vector<Matrix> split_cols(const Matrix& m, const std::vector<std::size_t>& widths) {
    std::size_t total = 0;
    for (std::size_t w : widths) total += w;
    if (total != m.cols) throw ShapeError("split_cols: widths do not cover all columns");
    std::vector<Matrix> out;
    out.reserve(widths.size());
    std::size_t offset = 0;
    for (std::size_t w : widths) {
        Matrix b(m.rows, w);
        for (std::size_t i = 0; i < m.rows; ++i) {
            const double* src = m.data.data() + i * m.cols + offset;
            double* dst = b.data.data() + i * w;
            for (std::size_t j = 0; j < w; ++j) dst[j] = src[j];
        }
        offset += w;
        out.push_back(std::move(b));
    }
    return out;
}

Matrix gather_rows(const Matrix& m, std::span<const int> row_ids) {
    Matrix out(row_ids.size(), m.cols);
    for (std::size_t i = 0; i < row_ids.size(); ++i) {
        int r = row_ids[i];
        if (r < 0 || static_cast<std::size_t>(r) >= m.rows) {
            throw std::out_of_range("gather_rows: row " + std::to_string(r) + " out of range");
        }
        const double* src = m.data.data() + static_cast<std::size_t>(r) * m.cols;
        double* dst = out.data.data() + i * m.cols;
        for (std::size_t j = 0; j < m.cols; ++j) dst[j] = src[j];
    }
    return out;
}

double l2_norm(std::span<const double> v) {
    double acc = 0.0;
    for (double x : v) acc += x * x;
    return std::sqrt(acc);
}

} // namespace vfl
