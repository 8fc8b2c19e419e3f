#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "vfl/matrix.hpp"

namespace vfl {

enum class Activation { relu, identity };

struct SgdConfig {
    double learning_rate = 0.1;
    std::size_t batch_size = 128;
};

struct Layer {
    Matrix w;              // in_dim x out_dim
    std::vector<double> b; // out_dim
    Activation act = Activation::identity;
};

// Post-activation value of every layer; acts[0] is the input batch.
struct MlpCache {
    std::vector<Matrix> acts;
};

struct LayerGrads {
    Matrix dw;
    std::vector<double> db;
};

struct MlpGrads {
    std::vector<LayerGrads> layers;
    Matrix input; // dLoss/dInput, needed to route gradients across the split
};

// Plain fully connected network. Hidden layers share one activation, the
// last layer is always identity; losses apply their own nonlinearity.
class Mlp {
public:
    Mlp() = default;
    // He-style init: weights ~ N(0,1)/sqrt(fan_in), biases zero. Deterministic per seed.
    Mlp(const std::vector<std::size_t>& layer_dims, Activation hidden_act, std::uint64_t seed);

    std::size_t input_dim() const { return layers_.empty() ? 0 : layers_.front().w.rows; }
    std::size_t output_dim() const { return layers_.empty() ? 0 : layers_.back().w.cols; }
    std::size_t n_layers() const { return layers_.size(); }

    const std::vector<Layer>& layers() const { return layers_; }
    std::vector<Layer>& layers() { return layers_; }

    Matrix forward(const Matrix& batch, MlpCache* cache = nullptr) const;

    // Analytic gradients for all parameters and the input; no mutation.
    MlpGrads gradients(const MlpCache& cache, const Matrix& output_grad) const;

    // One in-place SGD step; returns dLoss/dInput computed with the
    // pre-update parameters.
    Matrix sgd_step(const MlpCache& cache, const Matrix& output_grad, double learning_rate);

private:
    std::vector<Layer> layers_;
};

std::string activation_name(Activation a);
Activation activation_from_name(const std::string& name);

// Versioned plain-text checkpoint: header "mlp v1 <n_layers>", then per layer
// "layer <in> <out> <activation>" followed by row-major weights and biases
// with 17 significant digits (round-trips doubles exactly).
void save_mlp(const Mlp& m, std::ostream& os);
void save_mlp(const Mlp& m, const std::string& path);
Mlp load_mlp(std::istream& is);
Mlp load_mlp(const std::string& path);

} // namespace vfl
