#include "vfl/losses.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "vfl/errors.hpp"

namespace vfl {

LossGrad softmax_cross_entropy(const Matrix& logits, std::span<const int> labels) {
    if (labels.size() != logits.rows) {
        throw ShapeError("cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(logits.rows) + " rows");
    }
    const std::size_t n = logits.rows, c = logits.cols;
    LossGrad out;
    out.grad = Matrix(n, c);
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        int y = labels[i];
        if (y < 0 || static_cast<std::size_t>(y) >= c) {
            throw DataError("cross_entropy: label " + std::to_string(y) + " at row " +
                            std::to_string(i) + " outside [0," + std::to_string(c) + ")");
        }
        const double* z = logits.data.data() + i * c;
        double zmax = *std::max_element(z, z + c);
        double sum = 0.0;
        for (std::size_t j = 0; j < c; ++j) sum += std::exp(z[j] - zmax);
        double lse = zmax + std::log(sum);
        total += lse - z[y];
        double* g = out.grad.data.data() + i * c;
        for (std::size_t j = 0; j < c; ++j) g[j] = std::exp(z[j] - lse) / n;
        g[y] -= 1.0 / n;
    }
    out.loss = total / n;
    return out;
}

LossGrad masked_mse(const Matrix& pred, const Matrix& target,
                    std::span<const std::uint8_t> col_mask) {
    if (!pred.same_shape(target)) throw ShapeError("masked_mse: pred/target shape mismatch");
    if (col_mask.size() != pred.cols) throw ShapeError("masked_mse: mask length != cols");
    std::size_t masked_cols = 0;
    for (std::uint8_t m : col_mask) masked_cols += (m != 0);
    if (masked_cols == 0) throw ConfigError("masked_mse: mask selects no columns");

    const double count = static_cast<double>(pred.rows * masked_cols);
    LossGrad out;
    out.grad = Matrix(pred.rows, pred.cols);
    double total = 0.0;
    for (std::size_t i = 0; i < pred.rows; ++i) {
        const double* p = pred.data.data() + i * pred.cols;
        const double* t = target.data.data() + i * pred.cols;
        double* g = out.grad.data.data() + i * pred.cols;
        for (std::size_t j = 0; j < pred.cols; ++j) {
            if (!col_mask[j]) continue;
            double d = p[j] - t[j];
            total += d * d;
            g[j] = 2.0 * d / count;
        }
    }
    out.loss = total / count;
    return out;
}

} // namespace vfl
