#pragma once

#include <cstdint>
#include <span>

#include "vfl/matrix.hpp"

namespace vfl {

struct LossGrad {
    double loss = 0.0;
    Matrix grad; // dLoss/dInput, already normalized by the loss's own convention
};

// Mean over the batch of -log softmax(logits)[label]; grad = (softmax - onehot) / batch.
LossGrad softmax_cross_entropy(const Matrix& logits, std::span<const int> labels);

// Squared error averaged over entries in columns where mask == 1; gradient is
// zero on unmasked columns. An all-zero mask has no objective and is rejected.
LossGrad masked_mse(const Matrix& pred, const Matrix& target,
                    std::span<const std::uint8_t> col_mask);

} // namespace vfl
