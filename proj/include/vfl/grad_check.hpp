#pragma once

#include <cstdint>
#include <functional>
#include <span>

#include "vfl/losses.hpp"
#include "vfl/mlp.hpp"

namespace vfl {

using LossFn = std::function<LossGrad(const Matrix& output)>;

// |analytic - numeric| relative to the numeric value, floored at 1e-4 so
// near-zero gradients do not blow up the ratio.
double relative_gradient_error(double analytic, double numeric);

// Central finite differences of the loss w.r.t. every parameter, compared to
// the analytic gradients. Returns the maximum relative error, with relative
// defined against the numeric value floored at 1e-4 so near-zero gradients
// do not blow up the ratio. eps must lie in (0, 1e-2].
double grad_check(Mlp& model, const Matrix& batch, const LossFn& loss_fn, double eps);

double grad_check_cross_entropy(Mlp& model, const Matrix& batch,
                                std::span<const int> labels, double eps);

// Randomized oracle sweep over n_models small networks, each checked against
// both losses used in the artifact (cross-entropy and masked MSE). Returns
// the worst relative error seen.
double grad_check_suite(int n_models, std::uint64_t seed, double eps);

} // namespace vfl
