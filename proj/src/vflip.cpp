#include "vfl/vflip.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <random>
#include <sstream>

#include "vfl/errors.hpp"
#include "vfl/losses.hpp"
#include "vfl/rng.hpp"

namespace vfl {

Matrix Standardizer::transform(const Matrix& h) const {
    if (h.cols != mean.size()) throw ShapeError("standardizer: column count mismatch");
    Matrix out = h;
    for (std::size_t i = 0; i < out.rows; ++i) {
        double* r = out.data.data() + i * out.cols;
        for (std::size_t j = 0; j < out.cols; ++j) r[j] = (r[j] - mean[j]) / std[j];
    }
    return out;
}

Matrix Standardizer::inverse(const Matrix& h) const {
    if (h.cols != mean.size()) throw ShapeError("standardizer: column count mismatch");
    Matrix out = h;
    for (std::size_t i = 0; i < out.rows; ++i) {
        double* r = out.data.data() + i * out.cols;
        for (std::size_t j = 0; j < out.cols; ++j) r[j] = r[j] * std[j] + mean[j];
    }
    return out;
}

Standardizer fit_standardizer(const Matrix& h_train) {
    if (h_train.rows < 2) throw DataError("standardizer: need at least 2 rows");
    const std::size_t d = h_train.cols;
    Standardizer s;
    s.mean.assign(d, 0.0);
    s.std.assign(d, 0.0);
    for (std::size_t i = 0; i < h_train.rows; ++i) {
        const double* r = h_train.data.data() + i * d;
        for (std::size_t j = 0; j < d; ++j) s.mean[j] += r[j];
    }
    for (double& m : s.mean) m /= static_cast<double>(h_train.rows);
    for (std::size_t i = 0; i < h_train.rows; ++i) {
        const double* r = h_train.data.data() + i * d;
        for (std::size_t j = 0; j < d; ++j) {
            double diff = r[j] - s.mean[j];
            s.std[j] += diff * diff;
        }
    }
    for (double& v : s.std) {
        v = std::sqrt(v / static_cast<double>(h_train.rows)); // population std
        v = std::max(v, 1e-8);
    }
    return s;
}

std::vector<std::uint8_t> block_mask(int n_participants, int block_dim,
                                     std::span<const int> kept_blocks) {
    std::vector<std::uint8_t> mask(
        static_cast<std::size_t>(n_participants) * static_cast<std::size_t>(block_dim), 0);
    for (int b : kept_blocks) {
        if (b < 0 || b >= n_participants) throw ConfigError("block_mask: block index out of range");
        std::size_t start = static_cast<std::size_t>(b) * static_cast<std::size_t>(block_dim);
        std::fill(mask.begin() + static_cast<std::ptrdiff_t>(start),
                  mask.begin() + static_cast<std::ptrdiff_t>(start + block_dim), 1);
    }
    return mask;
}

std::vector<std::uint8_t> mask_complement(std::span<const std::uint8_t> mask) {
    std::vector<std::uint8_t> out(mask.size());
    for (std::size_t i = 0; i < mask.size(); ++i) out[i] = mask[i] ? 0 : 1;
    return out;
}

void apply_mask(Matrix& h, std::span<const std::uint8_t> mask) {
    if (mask.size() != h.cols) throw ShapeError("apply_mask: mask length != cols");
    for (std::size_t i = 0; i < h.rows; ++i) {
        double* r = h.data.data() + i * h.cols;
        for (std::size_t j = 0; j < h.cols; ++j) {
            if (!mask[j]) r[j] = 0.0;
        }
    }
}

Matrix Mae::reconstruct(const Matrix& std_input) const {
    return decoder.forward(encoder.forward(std_input));
}

MaeTrainResult train_mae(const Matrix& h_train, const MaeConfig& cfg) {
    if (cfg.n_participants < 2) {
        throw ConfigError("train_mae: need at least 2 participants for the masking strategies");
    }
    const std::size_t nd =
        static_cast<std::size_t>(cfg.n_participants) * static_cast<std::size_t>(cfg.block_dim);
    if (h_train.cols != nd) {
        throw ShapeError("train_mae: store has " + std::to_string(h_train.cols) +
                         " cols, expected " + std::to_string(nd));
    }
    if (cfg.epochs < 1) throw ConfigError("train_mae: epochs must be >= 1");

    MaeTrainResult result;
    Mae& mae = result.mae;
    mae.n_participants = cfg.n_participants;
    mae.block_dim = cfg.block_dim;
    mae.stdz = fit_standardizer(h_train);
    mae.encoder = Mlp({nd, cfg.hidden, cfg.hidden, cfg.latent}, Activation::relu,
                      mix_seed(cfg.seed, 41));
    mae.decoder = Mlp({cfg.latent, cfg.hidden, cfg.hidden, nd}, Activation::relu,
                      mix_seed(cfg.seed, 42));

    Matrix hs = mae.stdz.transform(h_train);
    std::mt19937_64 rng = make_rng(cfg.seed, 43);
    std::uniform_int_distribution<int> pick_block(0, cfg.n_participants - 1);
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    std::vector<int> order(h_train.rows);
    std::iota(order.begin(), order.end(), 0);

    auto dropout = [&](Matrix& m) {
        if (cfg.dropout_prob <= 0.0) return;
        for (double& v : m.data) {
            if (unit(rng) < cfg.dropout_prob) v = 0.0;
        }
    };
    auto step = [&](const Matrix& input, const Matrix& target,
                    std::span<const std::uint8_t> loss_mask, double lr) {
        MlpCache enc_cache, dec_cache;
        Matrix latent = mae.encoder.forward(input, &enc_cache);
        Matrix recon = mae.decoder.forward(latent, &dec_cache);
        LossGrad lg = masked_mse(recon, target, loss_mask);
        Matrix latent_grad = mae.decoder.sgd_step(dec_cache, lg.grad, lr);
        mae.encoder.sgd_step(enc_cache, latent_grad, lr);
        return lg.loss;
    };

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double loss_sum = 0.0;
        std::size_t n_steps = 0;
        for (std::size_t start = 0; start < hs.rows; start += cfg.batch_size) {
            std::size_t count = std::min(cfg.batch_size, hs.rows - start);
            Matrix target = gather_rows(hs, std::span<const int>(order.data() + start, count));

            // "N-1 to 1": mask out block i, restore block i from the rest.
            int i = pick_block(rng);
            auto keep_all_but_i = mask_complement(block_mask(cfg.n_participants, cfg.block_dim,
                                                             std::span<const int>(&i, 1)));
            Matrix input = target;
            apply_mask(input, keep_all_but_i);
            dropout(input);
            auto loss_mask_i = block_mask(cfg.n_participants, cfg.block_dim,
                                          std::span<const int>(&i, 1));
            loss_sum += step(input, target, loss_mask_i, cfg.lr_n1);

            // "1 to 1": keep only block j, restore a distinct block i.
            int i2 = pick_block(rng);
            int j = pick_block(rng);
            while (j == i2) j = pick_block(rng);
            auto keep_only_j = block_mask(cfg.n_participants, cfg.block_dim,
                                          std::span<const int>(&j, 1));
            Matrix input2 = target;
            apply_mask(input2, keep_only_j);
            dropout(input2);
            auto loss_mask_i2 = block_mask(cfg.n_participants, cfg.block_dim,
                                           std::span<const int>(&i2, 1));
            loss_sum += step(input2, target, loss_mask_i2, cfg.lr_11);
            n_steps += 2;
        }
        result.epoch_loss.push_back(loss_sum / static_cast<double>(n_steps));
    }
    return result;
}

Matrix anomaly_scores(const Mae& mae, const Matrix& h_rows) {
    const int n = mae.n_participants;
    const std::size_t d = static_cast<std::size_t>(mae.block_dim);
    const std::size_t nd = static_cast<std::size_t>(n) * d;
    if (h_rows.cols != nd) throw ShapeError("anomaly_scores: row length != N*d");

    Matrix hs = mae.stdz.transform(h_rows);
    Matrix scores(h_rows.rows, static_cast<std::size_t>(n) * static_cast<std::size_t>(n));
    for (int j = 0; j < n; ++j) {
        auto keep_j = block_mask(n, mae.block_dim, std::span<const int>(&j, 1));
        Matrix input = hs;
        apply_mask(input, keep_j);
        Matrix recon = mae.reconstruct(input);
        for (std::size_t r = 0; r < hs.rows; ++r) {
            const double* rec = recon.data.data() + r * nd;
            const double* truth = hs.data.data() + r * nd;
            for (int i = 0; i < n; ++i) {
                if (i == j) continue;
                std::size_t off = static_cast<std::size_t>(i) * d;
                double acc = 0.0;
                for (std::size_t k = 0; k < d; ++k) {
                    double diff = rec[off + k] - truth[off + k];
                    acc += diff * diff;
                }
                scores(r, static_cast<std::size_t>(j) * static_cast<std::size_t>(n) +
                              static_cast<std::size_t>(i)) = std::sqrt(acc);
            }
        }
    }
    return scores;
}

void threshold_from_scores(std::span<const double> scores, double rho, double& mu,
                           double& sigma, double& t) {
    if (scores.empty()) throw DataError("thresholds: empty score pool");
    mu = 0.0;
    for (double s : scores) mu += s;
    mu /= static_cast<double>(scores.size());
    sigma = 0.0;
    for (double s : scores) sigma += (s - mu) * (s - mu);
    sigma = std::sqrt(sigma / static_cast<double>(scores.size()));
    t = mu + rho * sigma;
}

ThresholdTable fit_thresholds(const Mae& mae, const Matrix& h_train, double rho) {
    if (h_train.rows == 0) throw DataError("fit_thresholds: empty embedding store");
    if (rho < 0.0) throw ConfigError("fit_thresholds: rho must be >= 0");
    const int n = mae.n_participants;
    if (n == 2) {
        std::cerr << "warning: with 2 participants majority voting (votes > N/2) can never "
                     "flag an embedding\n";
    }
    Matrix scores = anomaly_scores(mae, h_train);
    ThresholdTable th;
    th.rho = rho;
    th.mu.resize(static_cast<std::size_t>(n));
    th.sigma.resize(static_cast<std::size_t>(n));
    th.t.resize(static_cast<std::size_t>(n));
    std::vector<double> pool;
    pool.reserve(h_train.rows * static_cast<std::size_t>(n - 1));
    for (int i = 0; i < n; ++i) {
        pool.clear();
        for (std::size_t r = 0; r < scores.rows; ++r) {
            for (int j = 0; j < n; ++j) {
                if (j == i) continue;
                pool.push_back(scores(r, static_cast<std::size_t>(j) * static_cast<std::size_t>(n) +
                                             static_cast<std::size_t>(i)));
            }
        }
        threshold_from_scores(pool, rho, th.mu[static_cast<std::size_t>(i)],
                              th.sigma[static_cast<std::size_t>(i)],
                              th.t[static_cast<std::size_t>(i)]);
    }
    return th;
}

IdentificationResult identify(std::span<const double> row_scores, const ThresholdTable& th,
                              int n_participants) {
    const auto n = static_cast<std::size_t>(n_participants);
    if (row_scores.size() != n * n) throw ShapeError("identify: score table size != N*N");
    IdentificationResult result;
    result.votes.assign(n, 0);
    result.flagged.assign(n, 0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            if (j == i) continue;
            if (row_scores[j * n + i] > th.t[i]) ++result.votes[i];
        }
        // Strict majority: "greater than half", ties favor benign.
        result.flagged[i] = (2 * result.votes[i] > n_participants) ? 1 : 0;
    }
    return result;
}

Matrix purify_row(const Mae& mae, std::span<const double> h_row,
                  const IdentificationResult& ident, PurifyMode mode,
                  std::size_t* fallback_events) {
    const int n = mae.n_participants;
    const std::size_t d = static_cast<std::size_t>(mae.block_dim);
    Matrix raw(1, h_row.size());
    std::copy(h_row.begin(), h_row.end(), raw.data.begin());
    Matrix hs = mae.stdz.transform(raw);

    std::vector<std::uint8_t> flagged(ident.flagged.begin(), ident.flagged.end());
    bool all = std::all_of(flagged.begin(), flagged.end(), [](std::uint8_t f) { return f != 0; });
    if (all) {
        // Keep the minimum-vote block; an all-zero input would carry no signal.
        std::size_t keep = 0;
        for (std::size_t i = 1; i < flagged.size(); ++i) {
            if (ident.votes[i] < ident.votes[keep]) keep = i;
        }
        flagged[keep] = 0;
        if (fallback_events) ++(*fallback_events);
    }

    Matrix input = hs;
    for (int b = 0; b < n; ++b) {
        if (!flagged[static_cast<std::size_t>(b)]) continue;
        double* r = input.data.data() + static_cast<std::size_t>(b) * d;
        std::fill(r, r + d, 0.0);
    }
    Matrix recon = mae.reconstruct(input);
    if (mode == PurifyMode::replace_flagged_only) {
        for (int b = 0; b < n; ++b) {
            if (ident.flagged[static_cast<std::size_t>(b)]) continue;
            std::size_t off = static_cast<std::size_t>(b) * d;
            std::copy(hs.data.begin() + static_cast<std::ptrdiff_t>(off),
                      hs.data.begin() + static_cast<std::ptrdiff_t>(off + d),
                      recon.data.begin() + static_cast<std::ptrdiff_t>(off));
        }
    }
    return mae.stdz.inverse(recon);
}

DefendResult defend(const Mae& mae, const ThresholdTable& th, const Matrix& h_rows,
                    PurifyMode mode) {
    const int n = mae.n_participants;
    DefendResult result;
    result.purified = Matrix(h_rows.rows, h_rows.cols);
    result.flags = Matrix(h_rows.rows, static_cast<std::size_t>(n));
    Matrix scores = anomaly_scores(mae, h_rows);
    for (std::size_t r = 0; r < h_rows.rows; ++r) {
        IdentificationResult ident = identify(scores.row(r), th, n);
        for (int i = 0; i < n; ++i) {
            result.flags(r, static_cast<std::size_t>(i)) =
                ident.flagged[static_cast<std::size_t>(i)] ? 1.0 : 0.0;
        }
        Matrix purified = purify_row(mae, h_rows.row(r), ident, mode, &result.fallback_events);
        std::copy(purified.data.begin(), purified.data.end(), result.purified.row(r).begin());
    }
    if (!result.purified.all_finite()) throw DataError("defend: non-finite purified embedding");
    return result;
}

Matrix VflipDefense::apply(const Matrix& h) {
    DefendResult r = defend(*mae_, *th_, h, mode_);
    if (flags_.empty()) {
        flags_ = std::move(r.flags);
    } else {
        if (flags_.cols != r.flags.cols) throw ShapeError("vflip defense: flag width changed");
        flags_.data.insert(flags_.data.end(), r.flags.data.begin(), r.flags.data.end());
        flags_.rows += r.flags.rows;
    }
    fallback_events_ += r.fallback_events;
    return std::move(r.purified);
}

void VflipDefense::reset() {
    flags_ = Matrix();
    fallback_events_ = 0;
}

namespace {

void write_vector(std::ostream& os, const char* key, std::span<const double> v) {
    os << key << "=";
    char buf[40];
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) os << ",";
        std::snprintf(buf, sizeof(buf), "%.17g", v[i]);
        os << buf;
    }
    os << "\n";
}

std::vector<double> parse_vector(const std::string& csv) {
    std::vector<double> out;
    std::stringstream ss(csv);
    std::string tok;
    while (std::getline(ss, tok, ',')) out.push_back(std::stod(tok));
    return out;
}

} // namespace

void save_mae(const Mae& mae, const ThresholdTable& th, const std::string& dir,
              const std::string& config_digest) {
    std::filesystem::create_directories(dir);
    save_mlp(mae.encoder, dir + "/encoder.mlp");
    save_mlp(mae.decoder, dir + "/decoder.mlp");
    std::ofstream os(dir + "/meta.txt");
    if (!os) throw IoError("cannot write mae meta in '" + dir + "'");
    os << "n_participants=" << mae.n_participants << "\n";
    os << "block_dim=" << mae.block_dim << "\n";
    os << "rho=" << th.rho << "\n";
    os << "config_digest=" << config_digest << "\n";
    write_vector(os, "mean", mae.stdz.mean);
    write_vector(os, "std", mae.stdz.std);
    write_vector(os, "mu", th.mu);
    write_vector(os, "sigma", th.sigma);
    write_vector(os, "t", th.t);
}

std::pair<Mae, ThresholdTable> load_mae(const std::string& dir) {
    Mae mae;
    mae.encoder = load_mlp(dir + "/encoder.mlp");
    mae.decoder = load_mlp(dir + "/decoder.mlp");
    std::ifstream is(dir + "/meta.txt");
    if (!is) throw IoError("cannot open mae meta in '" + dir + "'");
    ThresholdTable th;
    std::string line;
    while (std::getline(is, line)) {
        auto eq = line.find('=');
        if (eq == std::string::npos) continue;
        std::string key = line.substr(0, eq);
        std::string value = line.substr(eq + 1);
        if (key == "n_participants") mae.n_participants = std::stoi(value);
        else if (key == "block_dim") mae.block_dim = std::stoi(value);
        else if (key == "rho") th.rho = std::stod(value);
        else if (key == "mean") mae.stdz.mean = parse_vector(value);
        else if (key == "std") mae.stdz.std = parse_vector(value);
        else if (key == "mu") th.mu = parse_vector(value);
        else if (key == "sigma") th.sigma = parse_vector(value);
        else if (key == "t") th.t = parse_vector(value);
    }
    if (mae.n_participants < 2 || mae.stdz.mean.empty()) {
        throw DataError("mae meta: missing fields in '" + dir + "'");
    }
    return {std::move(mae), std::move(th)};
}

} // namespace vfl
