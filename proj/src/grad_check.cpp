#include "vfl/grad_check.hpp"

#include <cmath>
#include <random>
#include <vector>

#include "vfl/errors.hpp"
#include "vfl/rng.hpp"

namespace vfl {

double relative_gradient_error(double analytic, double numeric) {
    return std::abs(analytic - numeric) / std::max(std::abs(numeric), 1e-4);
}

double grad_check(Mlp& model, const Matrix& batch, const LossFn& loss_fn, double eps) {
    if (!(eps > 0.0 && eps <= 1e-2)) {
        throw ConfigError("grad_check: eps must be in (0, 1e-2]");
    }
    MlpCache cache;
    Matrix out = model.forward(batch, &cache);
    LossGrad lg = loss_fn(out);
    MlpGrads grads = model.gradients(cache, lg.grad);

    auto probe_at = [&](double* p, double analytic, double step) {
        double orig = *p;
        *p = orig + step;
        double lp = loss_fn(model.forward(batch)).loss;
        *p = orig - step;
        double lm = loss_fn(model.forward(batch)).loss;
        *p = orig;
        double numeric = (lp - lm) / (2.0 * step);
        return relative_gradient_error(analytic, numeric);
    };
    // A ReLU kink inside the probe window corrupts the central difference; a
    // genuine analytic error survives a smaller step, a kink artifact does not.
    auto probe = [&](double* p, double analytic) {
        double rel = probe_at(p, analytic, eps);
        for (double step = eps / 8.0; rel > 1e-5 && step >= eps / 64.0; step /= 8.0) {
            rel = std::min(rel, probe_at(p, analytic, step));
        }
        return rel;
    };

    double max_rel = 0.0;
    for (std::size_t k = 0; k < model.n_layers(); ++k) {
        Layer& layer = model.layers()[k];
        const LayerGrads& lgk = grads.layers[k];
        for (std::size_t idx = 0; idx < layer.w.data.size(); ++idx) {
            max_rel = std::max(max_rel, probe(&layer.w.data[idx], lgk.dw.data[idx]));
        }
        for (std::size_t j = 0; j < layer.b.size(); ++j) {
            max_rel = std::max(max_rel, probe(&layer.b[j], lgk.db[j]));
        }
    }
    return max_rel;
}

double grad_check_cross_entropy(Mlp& model, const Matrix& batch,
                                std::span<const int> labels, double eps) {
    std::vector<int> copy(labels.begin(), labels.end());
    return grad_check(model, batch,
                      [&copy](const Matrix& out) { return softmax_cross_entropy(out, copy); },
                      eps);
}

double grad_check_suite(int n_models, std::uint64_t seed, double eps) {
    double worst = 0.0;
    for (int m = 0; m < n_models; ++m) {
        std::mt19937_64 rng = make_rng(seed, 7000 + static_cast<std::uint64_t>(m));
        std::uniform_int_distribution<std::size_t> dim_dist(2, 6);
        std::uniform_int_distribution<int> depth_dist(1, 3);
        std::uniform_int_distribution<int> batch_dist(3, 8);
        std::normal_distribution<double> normal(0.0, 1.0);

        std::vector<std::size_t> dims;
        dims.push_back(dim_dist(rng));
        int hidden = depth_dist(rng);
        for (int h = 0; h < hidden; ++h) dims.push_back(dim_dist(rng));
        dims.push_back(dim_dist(rng));

        std::size_t batch_rows = static_cast<std::size_t>(batch_dist(rng));
        Matrix batch(batch_rows, dims.front());
        for (double& v : batch.data) v = normal(rng);

        Mlp net(dims, Activation::relu, rng());
        // Move biases off zero: with zero biases a fully-zero ReLU row pins a
        // downstream pre-activation exactly on the kink, where no derivative
        // convention can match a central difference.
        for (Layer& layer : net.layers()) {
            for (double& b : layer.b) b = 0.05 * normal(rng);
        }

        std::vector<int> labels(batch_rows);
        std::uniform_int_distribution<int> label_dist(0, static_cast<int>(dims.back()) - 1);
        for (int& y : labels) y = label_dist(rng);
        worst = std::max(worst, grad_check_cross_entropy(net, batch, labels, eps));

        Matrix target(batch_rows, dims.back());
        for (double& v : target.data) v = normal(rng);
        std::vector<std::uint8_t> mask(dims.back(), 0);
        std::uniform_int_distribution<int> bit(0, 1);
        bool any = false;
        for (std::uint8_t& b : mask) {
            b = static_cast<std::uint8_t>(bit(rng));
            any |= (b != 0);
        }
        if (!any) mask[0] = 1;
        worst = std::max(worst,
                         grad_check(net, batch,
                                    [&](const Matrix& out) { return masked_mse(out, target, mask); },
                                    eps));
    }
    return worst;
}

} // namespace vfl
