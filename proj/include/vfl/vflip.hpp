#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "vfl/matrix.hpp"
#include "vfl/mlp.hpp"
#include "vfl/protocol.hpp"

namespace vfl {

// Per-column mean/std fitted on the final-epoch embedding store. Stds are
// floored at 1e-8 so constant columns stay invertible.
struct Standardizer {
    std::vector<double> mean;
    std::vector<double> std;

    Matrix transform(const Matrix& h) const;
    Matrix inverse(const Matrix& h) const;
};

Standardizer fit_standardizer(const Matrix& h_train);

// 0/1 column mask with ones exactly on the blocks listed in kept_blocks.
std::vector<std::uint8_t> block_mask(int n_participants, int block_dim,
                                     std::span<const int> kept_blocks);
std::vector<std::uint8_t> mask_complement(std::span<const std::uint8_t> mask);

// Zero the columns where mask == 0, in place.
void apply_mask(Matrix& h, std::span<const std::uint8_t> mask);

struct MaeConfig {
    int n_participants = 0;
    int block_dim = 0;
    std::size_t hidden = 64;
    std::size_t latent = 32;
    std::size_t epochs = 20;
    double lr_n1 = 0.01;      // "N-1 to 1" strategy
    double lr_11 = 0.1;       // "1 to 1" strategy
    double dropout_prob = 0.1; // element-wise input zeroing, training only
    std::size_t batch_size = 64;
    std::uint64_t seed = 1;
};

// Masked autoencoder over concatenated embeddings; operates entirely in
// standardized space, so a masked (zeroed) block equals the per-column
// training mean in raw space.
struct Mae {
    Mlp encoder; // 3 layers, input N*d
    Mlp decoder; // 3 layers, output N*d
    Standardizer stdz;
    int n_participants = 0;
    int block_dim = 0;

    // Reconstruction of a standardized input; no dropout.
    Matrix reconstruct(const Matrix& std_input) const;
};

struct MaeTrainResult {
    Mae mae;
    std::vector<double> epoch_loss; // mean of both strategy losses per epoch
};

// Alternates the two masking strategies once each per minibatch: reconstruct
// a random block from all the others, then from one other random block.
// The loss is restricted to the selected block both times.
MaeTrainResult train_mae(const Matrix& h_train, const MaeConfig& cfg);

// s[j -> i] = || block i of MAE(only block j kept) - block i ||_2 in
// standardized space. Output has one row per input row, laid out as j*N+i;
// diagonal entries are 0 and undefined.
Matrix anomaly_scores(const Mae& mae, const Matrix& h_rows);

struct ThresholdTable {
    std::vector<double> mu;    // per target participant, pooled over sources
    std::vector<double> sigma; // population std of the pooled scores
    std::vector<double> t;     // mu + rho * sigma
    double rho = 0.0;
};

// Pooled statistics helper: mean, population std, and mu + rho*sigma.
void threshold_from_scores(std::span<const double> scores, double rho, double& mu,
                           double& sigma, double& t);

ThresholdTable fit_thresholds(const Mae& mae, const Matrix& h_train, double rho);

struct IdentificationResult {
    std::vector<int> votes;           // votes_i = |{j != i : s[j->i] > t_i}|
    std::vector<std::uint8_t> flagged; // flagged_i <=> votes_i > N/2 (strict)
};

IdentificationResult identify(std::span<const double> row_scores, const ThresholdTable& th,
                              int n_participants);

enum class PurifyMode { reconstruct_all, replace_flagged_only };

// Zero the flagged blocks, reconstruct with the MAE, and de-standardize.
// With all blocks flagged, the minimum-vote block (lowest index on ties) is
// kept as reconstruction input; consumers can count such events.
Matrix purify_row(const Mae& mae, std::span<const double> h_row,
                  const IdentificationResult& ident, PurifyMode mode,
                  std::size_t* fallback_events = nullptr);

struct DefendResult {
    Matrix purified;            // raw space, same shape as the input
    Matrix flags;               // rows x N, 0/1 per participant
    std::size_t fallback_events = 0; // rows where every block was flagged
};

// Full inference-time pipeline per row: anomaly scores, majority-vote
// identification, purification. Rows are processed independently.
DefendResult defend(const Mae& mae, const ThresholdTable& th, const Matrix& h_rows,
                    PurifyMode mode = PurifyMode::reconstruct_all);

class VflipDefense final : public Defense {
public:
    VflipDefense(const Mae* mae, const ThresholdTable* th, PurifyMode mode)
        : mae_(mae), th_(th), mode_(mode) {}
    Matrix apply(const Matrix& h) override;
    // Flags accumulated over all apply() calls since the last reset; one row
    // per defended embedding row.
    const Matrix& flags() const { return flags_; }
    std::size_t fallback_events() const { return fallback_events_; }
    void reset();

private:
    const Mae* mae_;
    const ThresholdTable* th_;
    PurifyMode mode_;
    Matrix flags_;
    std::size_t fallback_events_ = 0;
};

// Checkpoint: two mlp files plus a key=value section with the standardizer
// vectors and the threshold table.
void save_mae(const Mae& mae, const ThresholdTable& th, const std::string& dir,
              const std::string& config_digest);
std::pair<Mae, ThresholdTable> load_mae(const std::string& dir);

} // namespace vfl
