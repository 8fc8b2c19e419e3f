#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "vfl/dataset.hpp"
#include "vfl/mlp.hpp"

namespace vfl {

// Joint state of the split architecture: N participant bottom models and the
// server's top model consuming their concatenated embeddings.
struct VflSession {
    std::vector<Mlp> bottoms;
    Mlp top;
    SgdConfig sgd;
    std::vector<double> lr_scale; // per-participant scale on the bottom SGD step
    int n_participants = 0;
    int embedding_dim = 0; // d per participant; top input dim is N*d
    std::mt19937_64 rng;
};

VflSession make_session(const std::vector<std::size_t>& block_widths, int embedding_dim,
                        const std::vector<std::size_t>& bottom_hidden,
                        const std::vector<std::size_t>& top_hidden, int n_classes,
                        SgdConfig sgd, std::uint64_t seed);

struct EmbeddingBatch {
    std::vector<Matrix> blocks; // per participant, batch x d
    Matrix concat;              // batch x N*d, blocks joined in participant order
    std::vector<int> rows;      // global sample ids, shared across participants
};

struct GradientBatch {
    std::vector<Matrix> blocks; // dLoss/dh_i, shape-matched to the EmbeddingBatch
};

// Concatenated embeddings collected during the final training epoch, exactly
// as the server saw them (post attacker hooks), one row per training sample.
struct EmbeddingStore {
    Matrix h; // K_train x N*d
    std::vector<int> labels;
    std::vector<int> sample_index; // global train row each store row came from
};

struct EpochStats {
    int epoch = 0;
    double mean_loss = 0.0;
};

struct BatchContext {
    int epoch = 0;       // 1-based
    int total_epochs = 0;
    bool final_epoch = false;
    std::span<const int> rows; // global sample ids in this batch
};

// Behavior a malicious participant can install at its own hook points. Benign
// participants have no agent; agents must never touch other participants'
// state.
class ParticipantAgent {
public:
    virtual ~ParticipantAgent() = default;
    // Start-of-epoch bookkeeping; may adjust the owner's lr_scale and read its
    // own bottom model from the session.
    virtual void epoch_begin(int /*epoch*/, int /*total_epochs*/, VflSession& /*session*/) {}
    // Training: rewrite the local raw-feature batch before the bottom forward.
    virtual void transform_features(Matrix& /*local*/, const BatchContext& /*ctx*/) {}
    // Training: rewrite the uploaded embedding block after the bottom forward.
    virtual void transform_embedding(Matrix& /*block*/, const BatchContext& /*ctx*/) {}
    // Training: observe the gradient block returned by the server.
    virtual void observe_gradient(const Matrix& /*grad_block*/, const BatchContext& /*ctx*/) {}
    // Inference-time triggering (evaluation of the planted backdoor).
    virtual void trigger_features(Matrix& /*local*/) {}
    virtual void trigger_embedding(Matrix& /*block*/) {}
};

using AgentMap = std::map<int, ParticipantAgent*>; // participant index -> agent

// Inference-time embedding transform installed by the server (the defense).
class Defense {
public:
    virtual ~Defense() = default;
    virtual Matrix apply(const Matrix& h) = 0; // (batch x N*d) -> same shape
};

struct TrainResult {
    std::vector<EpochStats> stats;
    EmbeddingStore store;
};

// The five-step training loop, run per batch: the server samples indices,
// participants upload embeddings (attacker hooks may rewrite their own data
// or block), the server runs the top model, updates it, and returns
// per-participant embedding gradients; participants then update their bottom
// models at lr * lr_scale. Final-epoch embeddings are collected into the
// store batch by batch.
TrainResult train_vfl(VflSession& session, const PartitionedSplit& train, int epochs,
                      const AgentMap& agents);

// Inference path (steps 1-3): embeddings, optional attacker triggering,
// optional defense transform, then argmax of the top-model logits.
std::vector<int> predict(const VflSession& session, const PartitionedSplit& split,
                         Defense* defense, const AgentMap& agents, bool trigger_attack);

// Forward-only embedding computation over a whole split.
EmbeddingBatch collect_embeddings(const VflSession& session, const PartitionedSplit& split,
                                  const AgentMap& agents, bool trigger_attack);

// Session checkpoint: manifest (key=value) plus one mlp file per model.
void save_session(const VflSession& session, const std::string& dir,
                  const std::string& config_digest, std::uint64_t seed);
VflSession load_session(const std::string& dir);

} // namespace vfl
