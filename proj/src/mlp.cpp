#include "vfl/mlp.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <sstream>

#include "vfl/errors.hpp"

namespace vfl {

Mlp::Mlp(const std::vector<std::size_t>& layer_dims, Activation hidden_act, std::uint64_t seed) {
    if (layer_dims.size() < 2) {
        throw ConfigError("mlp: need at least 2 layer dims, got " +
                          std::to_string(layer_dims.size()));
    }
    for (std::size_t d : layer_dims) {
        if (d < 1) throw ConfigError("mlp: layer dim must be >= 1");
    }
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    layers_.reserve(layer_dims.size() - 1);
    for (std::size_t k = 0; k + 1 < layer_dims.size(); ++k) {
        Layer layer;
        std::size_t fan_in = layer_dims[k];
        layer.w = Matrix(fan_in, layer_dims[k + 1]);
        double scale = 1.0 / std::sqrt(static_cast<double>(fan_in));
        for (double& v : layer.w.data) v = normal(rng) * scale;
        layer.b.assign(layer_dims[k + 1], 0.0);
        bool last = (k + 2 == layer_dims.size());
        layer.act = last ? Activation::identity : hidden_act;
        layers_.push_back(std::move(layer));
    }
}

Matrix Mlp::forward(const Matrix& batch, MlpCache* cache) const {
    if (layers_.empty()) throw ConfigError("mlp: forward on empty model");
    if (batch.cols != input_dim()) {
        throw ShapeError("mlp forward: batch has " + std::to_string(batch.cols) +
                         " cols, model expects " + std::to_string(input_dim()));
    }
    if (cache) {
        cache->acts.clear();
        cache->acts.reserve(layers_.size() + 1);
        cache->acts.push_back(batch);
    }
    Matrix cur = batch;
    for (const Layer& layer : layers_) {
        Matrix z = matmul(cur, layer.w);
        for (std::size_t i = 0; i < z.rows; ++i) {
            double* zr = z.data.data() + i * z.cols;
            for (std::size_t j = 0; j < z.cols; ++j) zr[j] += layer.b[j];
        }
        if (layer.act == Activation::relu) {
            for (double& v : z.data) {
                if (v < 0.0) v = 0.0;
            }
        }
        cur = std::move(z);
        if (cache) cache->acts.push_back(cur);
    }
    return cur;
}

MlpGrads Mlp::gradients(const MlpCache& cache, const Matrix& output_grad) const {
    if (cache.acts.size() != layers_.size() + 1) {
        throw ShapeError("mlp gradients: cache does not match model depth");
    }
    if (!output_grad.same_shape(cache.acts.back())) {
        throw ShapeError("mlp gradients: output_grad shape mismatch");
    }
    MlpGrads g;
    g.layers.resize(layers_.size());
    Matrix delta = output_grad;
    for (std::size_t k = layers_.size(); k-- > 0;) {
        const Layer& layer = layers_[k];
        if (layer.act == Activation::relu) {
            const Matrix& post = cache.acts[k + 1];
            for (std::size_t idx = 0; idx < delta.data.size(); ++idx) {
                if (post.data[idx] <= 0.0) delta.data[idx] = 0.0;
            }
        }
        g.layers[k].dw = matmul_at_b(cache.acts[k], delta);
        g.layers[k].db.assign(layer.b.size(), 0.0);
        for (std::size_t i = 0; i < delta.rows; ++i) {
            const double* dr = delta.data.data() + i * delta.cols;
            for (std::size_t j = 0; j < delta.cols; ++j) g.layers[k].db[j] += dr[j];
        }
        delta = matmul_a_bt(delta, layer.w);
    }
    g.input = std::move(delta);
    return g;
}

Matrix Mlp::sgd_step(const MlpCache& cache, const Matrix& output_grad, double learning_rate) {
    MlpGrads g = gradients(cache, output_grad);
    if (learning_rate != 0.0) {
        for (std::size_t k = 0; k < layers_.size(); ++k) {
            Layer& layer = layers_[k];
            const LayerGrads& lg = g.layers[k];
            for (std::size_t idx = 0; idx < layer.w.data.size(); ++idx) {
                layer.w.data[idx] -= learning_rate * lg.dw.data[idx];
            }
            for (std::size_t j = 0; j < layer.b.size(); ++j) {
                layer.b[j] -= learning_rate * lg.db[j];
            }
        }
    }
    return std::move(g.input);
}

std::string activation_name(Activation a) {
    return a == Activation::relu ? "relu" : "identity";
}

Activation activation_from_name(const std::string& name) {
    if (name == "relu") return Activation::relu;
    if (name == "identity") return Activation::identity;
    throw DataError("unknown activation '" + name + "'");
}

namespace {

void write_value(std::ostream& os, double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    os << buf;
}

} // namespace

void save_mlp(const Mlp& m, std::ostream& os) {
    os << "mlp v1 " << m.n_layers() << "\n";
    for (const Layer& layer : m.layers()) {
        os << "layer " << layer.w.rows << " " << layer.w.cols << " "
           << activation_name(layer.act) << "\n";
        for (std::size_t i = 0; i < layer.w.rows; ++i) {
            for (std::size_t j = 0; j < layer.w.cols; ++j) {
                if (j) os << " ";
                write_value(os, layer.w(i, j));
            }
            os << "\n";
        }
        for (std::size_t j = 0; j < layer.b.size(); ++j) {
            if (j) os << " ";
            write_value(os, layer.b[j]);
        }
        os << "\n";
    }
}

void save_mlp(const Mlp& m, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot open '" + path + "' for writing");
    save_mlp(m, os);
    if (!os) throw IoError("write failed for '" + path + "'");
}

Mlp load_mlp(std::istream& is) {
    std::string tag, version;
    std::size_t n_layers = 0;
    if (!(is >> tag >> version >> n_layers) || tag != "mlp" || version != "v1") {
        throw DataError("mlp checkpoint: bad header");
    }
    Mlp m;
    for (std::size_t k = 0; k < n_layers; ++k) {
        std::string kw, act_name;
        std::size_t in = 0, out = 0;
        if (!(is >> kw >> in >> out >> act_name) || kw != "layer") {
            throw DataError("mlp checkpoint: bad layer header at layer " + std::to_string(k));
        }
        Layer layer;
        layer.w = Matrix(in, out);
        layer.act = activation_from_name(act_name);
        for (double& v : layer.w.data) {
            if (!(is >> v)) throw DataError("mlp checkpoint: truncated weights");
        }
        layer.b.resize(out);
        for (double& v : layer.b) {
            if (!(is >> v)) throw DataError("mlp checkpoint: truncated biases");
        }
        m.layers().push_back(std::move(layer));
    }
    return m;
}

Mlp load_mlp(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open '" + path + "'");
    return load_mlp(is);
}

} // namespace vfl
