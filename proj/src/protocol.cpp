#include "vfl/protocol.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include "vfl/errors.hpp"
#include "vfl/losses.hpp"
#include "vfl/rng.hpp"

namespace vfl {

namespace {

void check_session_vs_split(const VflSession& s, const PartitionedSplit& split) {
    if (static_cast<int>(split.blocks.size()) != s.n_participants) {
        throw ShapeError("session expects " + std::to_string(s.n_participants) +
                         " participants, split has " + std::to_string(split.blocks.size()));
    }
    for (int i = 0; i < s.n_participants; ++i) {
        if (split.blocks[static_cast<std::size_t>(i)].cols != s.bottoms[static_cast<std::size_t>(i)].input_dim()) {
            throw ShapeError("participant " + std::to_string(i) + ": block width " +
                             std::to_string(split.blocks[static_cast<std::size_t>(i)].cols) +
                             " != bottom input dim " +
                             std::to_string(s.bottoms[static_cast<std::size_t>(i)].input_dim()));
        }
    }
}

void check_block_shape(const Matrix& block, std::size_t rows, std::size_t cols,
                       const char* where) {
    if (block.rows != rows || block.cols != cols) {
        throw ShapeError(std::string(where) + ": hook returned block of shape " +
                         std::to_string(block.rows) + "x" + std::to_string(block.cols) +
                         ", expected " + std::to_string(rows) + "x" + std::to_string(cols));
    }
}

} // namespace

VflSession make_session(const std::vector<std::size_t>& block_widths, int embedding_dim,
                        const std::vector<std::size_t>& bottom_hidden,
                        const std::vector<std::size_t>& top_hidden, int n_classes,
                        SgdConfig sgd, std::uint64_t seed) {
    if (block_widths.size() < 2) throw ConfigError("session: need at least 2 participants");
    if (embedding_dim < 1) throw ConfigError("session: embedding_dim must be >= 1");
    if (!(sgd.learning_rate > 0.0)) throw ConfigError("session: learning_rate must be > 0");
    if (sgd.batch_size < 1) throw ConfigError("session: batch_size must be >= 1");

    VflSession s;
    s.n_participants = static_cast<int>(block_widths.size());
    s.embedding_dim = embedding_dim;
    s.sgd = sgd;
    s.lr_scale.assign(block_widths.size(), 1.0);
    s.rng = make_rng(seed, 21);
    for (std::size_t i = 0; i < block_widths.size(); ++i) {
        std::vector<std::size_t> dims;
        dims.push_back(block_widths[i]);
        dims.insert(dims.end(), bottom_hidden.begin(), bottom_hidden.end());
        dims.push_back(static_cast<std::size_t>(embedding_dim));
        s.bottoms.emplace_back(dims, Activation::relu, mix_seed(seed, 100 + i));
    }
    std::vector<std::size_t> top_dims;
    top_dims.push_back(block_widths.size() * static_cast<std::size_t>(embedding_dim));
    top_dims.insert(top_dims.end(), top_hidden.begin(), top_hidden.end());
    top_dims.push_back(static_cast<std::size_t>(n_classes));
    s.top = Mlp(top_dims, Activation::relu, mix_seed(seed, 99));
    return s;
}

TrainResult train_vfl(VflSession& session, const PartitionedSplit& train, int epochs,
                      const AgentMap& agents) {
    if (epochs < 1) throw ConfigError("train_vfl: epochs must be >= 1");
    check_session_vs_split(session, train);
    const std::size_t k = train.n_rows();
    const std::size_t batch_size = session.sgd.batch_size;
    const std::size_t n = static_cast<std::size_t>(session.n_participants);
    const std::size_t d = static_cast<std::size_t>(session.embedding_dim);

    TrainResult result;
    result.store.h = Matrix(k, n * d);
    result.store.labels.resize(k);
    result.store.sample_index.resize(k);
    std::size_t store_row = 0;

    std::vector<int> order(k);
    std::iota(order.begin(), order.end(), 0);

    for (int epoch = 1; epoch <= epochs; ++epoch) {
        for (auto& [idx, agent] : agents) agent->epoch_begin(epoch, epochs, session);
        std::shuffle(order.begin(), order.end(), session.rng);

        double loss_sum = 0.0;
        std::size_t n_batches = 0;
        for (std::size_t start = 0; start < k; start += batch_size) {
            std::size_t count = std::min(batch_size, k - start);
            std::span<const int> rows(order.data() + start, count);
            BatchContext ctx{epoch, epochs, epoch == epochs, rows};

            std::vector<MlpCache> caches(n);
            std::vector<Matrix> blocks(n);
            for (std::size_t i = 0; i < n; ++i) {
                Matrix local = gather_rows(train.blocks[i], rows);
                auto it = agents.find(static_cast<int>(i));
                if (it != agents.end()) {
                    it->second->transform_features(local, ctx);
                    check_block_shape(local, count, train.blocks[i].cols, "transform_features");
                }
                blocks[i] = session.bottoms[i].forward(local, &caches[i]);
                if (it != agents.end()) {
                    it->second->transform_embedding(blocks[i], ctx);
                    check_block_shape(blocks[i], count, d, "transform_embedding");
                }
            }

            Matrix h = concat_cols(blocks);
            std::vector<int> labels(count);
            for (std::size_t i = 0; i < count; ++i) {
                labels[i] = train.labels[static_cast<std::size_t>(rows[i])];
            }
            MlpCache top_cache;
            Matrix logits = session.top.forward(h, &top_cache);
            LossGrad lg = softmax_cross_entropy(logits, labels);
            if (!std::isfinite(lg.loss)) {
                throw DataError("train_vfl: non-finite loss at epoch " + std::to_string(epoch));
            }
            loss_sum += lg.loss;
            ++n_batches;

            Matrix h_grad = session.top.sgd_step(top_cache, lg.grad, session.sgd.learning_rate);
            std::vector<Matrix> grad_blocks = split_cols(h_grad, std::vector<std::size_t>(n, d));
            for (std::size_t i = 0; i < n; ++i) {
                auto it = agents.find(static_cast<int>(i));
                if (it != agents.end()) it->second->observe_gradient(grad_blocks[i], ctx);
            }
            for (std::size_t i = 0; i < n; ++i) {
                session.bottoms[i].sgd_step(caches[i], grad_blocks[i],
                                            session.sgd.learning_rate * session.lr_scale[i]);
            }

            if (epoch == epochs) {
                for (std::size_t i = 0; i < count; ++i) {
                    std::copy(h.row(i).begin(), h.row(i).end(),
                              result.store.h.row(store_row).begin());
                    result.store.labels[store_row] = labels[i];
                    result.store.sample_index[store_row] = rows[i];
                    ++store_row;
                }
            }
        }
        result.stats.push_back({epoch, loss_sum / static_cast<double>(n_batches)});
    }
    return result;
}

namespace {

// Shared forward path for prediction and embedding collection.
Matrix forward_embeddings(const VflSession& session, const PartitionedSplit& split,
                          std::span<const int> rows, const AgentMap& agents, bool trigger,
                          std::vector<Matrix>* blocks_out) {
    const std::size_t n = static_cast<std::size_t>(session.n_participants);
    const std::size_t d = static_cast<std::size_t>(session.embedding_dim);
    std::vector<Matrix> blocks(n);
    for (std::size_t i = 0; i < n; ++i) {
        Matrix local = gather_rows(split.blocks[i], rows);
        auto it = agents.find(static_cast<int>(i));
        if (trigger && it != agents.end()) {
            it->second->trigger_features(local);
            check_block_shape(local, rows.size(), split.blocks[i].cols, "trigger_features");
        }
        blocks[i] = session.bottoms[i].forward(local);
        if (trigger && it != agents.end()) {
            it->second->trigger_embedding(blocks[i]);
            check_block_shape(blocks[i], rows.size(), d, "trigger_embedding");
        }
    }
    Matrix h = concat_cols(blocks);
    if (blocks_out) *blocks_out = std::move(blocks);
    return h;
}

} // namespace

std::vector<int> predict(const VflSession& session, const PartitionedSplit& split,
                         Defense* defense, const AgentMap& agents, bool trigger_attack) {
    check_session_vs_split(session, split);
    const std::size_t k = split.n_rows();
    const std::size_t batch_size = session.sgd.batch_size;
    std::vector<int> preds(k);
    std::vector<int> rows(k);
    std::iota(rows.begin(), rows.end(), 0);
    for (std::size_t start = 0; start < k; start += batch_size) {
        std::size_t count = std::min(batch_size, k - start);
        std::span<const int> batch_rows(rows.data() + start, count);
        Matrix h = forward_embeddings(session, split, batch_rows, agents, trigger_attack, nullptr);
        if (defense) {
            Matrix purified = defense->apply(h);
            if (!purified.same_shape(h)) {
                throw ShapeError("defense returned shape " + std::to_string(purified.rows) + "x" +
                                 std::to_string(purified.cols));
            }
            h = std::move(purified);
        }
        Matrix logits = session.top.forward(h);
        for (std::size_t i = 0; i < count; ++i) {
            auto r = logits.row(i);
            preds[start + i] = static_cast<int>(std::max_element(r.begin(), r.end()) - r.begin());
        }
    }
    return preds;
}

EmbeddingBatch collect_embeddings(const VflSession& session, const PartitionedSplit& split,
                                  const AgentMap& agents, bool trigger_attack) {
    check_session_vs_split(session, split);
    EmbeddingBatch out;
    out.rows.resize(split.n_rows());
    std::iota(out.rows.begin(), out.rows.end(), 0);
    out.concat = forward_embeddings(session, split, out.rows, agents, trigger_attack, &out.blocks);
    return out;
}

void save_session(const VflSession& session, const std::string& dir,
                  const std::string& config_digest, std::uint64_t seed) {
    std::filesystem::create_directories(dir);
    std::ofstream manifest(dir + "/manifest.txt");
    if (!manifest) throw IoError("cannot write session manifest in '" + dir + "'");
    manifest << "n_participants=" << session.n_participants << "\n";
    manifest << "embedding_dim=" << session.embedding_dim << "\n";
    manifest << "learning_rate=" << session.sgd.learning_rate << "\n";
    manifest << "batch_size=" << session.sgd.batch_size << "\n";
    manifest << "seed=" << seed << "\n";
    manifest << "config_digest=" << config_digest << "\n";
    manifest << "lr_scale=";
    for (std::size_t i = 0; i < session.lr_scale.size(); ++i) {
        if (i) manifest << ",";
        manifest << session.lr_scale[i];
    }
    manifest << "\n";
    for (int i = 0; i < session.n_participants; ++i) {
        save_mlp(session.bottoms[static_cast<std::size_t>(i)],
                 dir + "/bottom_" + std::to_string(i) + ".mlp");
    }
    save_mlp(session.top, dir + "/top.mlp");
}

VflSession load_session(const std::string& dir) {
    std::ifstream manifest(dir + "/manifest.txt");
    if (!manifest) throw IoError("cannot open session manifest in '" + dir + "'");
    VflSession s;
    std::uint64_t seed = 0;
    std::string line;
    std::string lr_scale_csv;
    while (std::getline(manifest, line)) {
        auto eq = line.find('=');
        if (eq == std::string::npos) continue;
        std::string key = line.substr(0, eq);
        std::string value = line.substr(eq + 1);
        if (key == "n_participants") s.n_participants = std::stoi(value);
        else if (key == "embedding_dim") s.embedding_dim = std::stoi(value);
        else if (key == "learning_rate") s.sgd.learning_rate = std::stod(value);
        else if (key == "batch_size") s.sgd.batch_size = static_cast<std::size_t>(std::stoull(value));
        else if (key == "seed") seed = std::stoull(value);
        else if (key == "lr_scale") lr_scale_csv = value;
    }
    if (s.n_participants < 2) throw DataError("session manifest: bad n_participants");
    s.lr_scale.clear();
    std::stringstream ss(lr_scale_csv);
    std::string tok;
    while (std::getline(ss, tok, ',')) s.lr_scale.push_back(std::stod(tok));
    if (s.lr_scale.size() != static_cast<std::size_t>(s.n_participants)) {
        throw DataError("session manifest: lr_scale length mismatch");
    }
    for (int i = 0; i < s.n_participants; ++i) {
        s.bottoms.push_back(load_mlp(dir + "/bottom_" + std::to_string(i) + ".mlp"));
    }
    s.top = load_mlp(dir + "/top.mlp");
    s.rng = make_rng(seed, 21);
    return s;
}

} // namespace vfl
