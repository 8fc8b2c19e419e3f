#pragma once

#include <cstdint>
#include <memory>
#include <random>
#include <span>
#include <vector>

#include "vfl/matrix.hpp"
#include "vfl/protocol.hpp"

namespace vfl {

enum class AttackKind { badvfl, villain };

// Full strategy of a (set of) malicious participant(s): label-inference mode,
// trigger parameters, scheduling and learning-rate amplification.
struct AttackPlan {
    std::vector<int> attacker_indices;
    int target_label = 0;
    double budget = 0.5;  // fraction of (inferred) target-label samples to trigger
    int e_bkd = 5;        // injection starts at this epoch; inference runs before it
    bool label_knowledge = true;
    double lr_amplify = 2.0;
    AttackKind kind = AttackKind::villain;
    double adaptive_eta = 0.0; // last-epoch probability of triggering non-target rows

    // VILLAIN
    double gamma = 3.0;
    double m_fraction = 0.75;
    double aug_drop_prob = 0.1;
    double lambda_low = 0.6;
    double lambda_high = 1.2;

    // BadVFL
    std::size_t trigger_window = 8;
    double trigger_value = 1.0;

    void validate(int n_participants, int epochs) const;
};

enum class LabelFlag : std::uint8_t { unknown, target, non_target };
using InferredLabels = std::vector<LabelFlag>;

// Additive embedding-level trigger: value pattern gamma*[s,s,-s,-s,...] on the
// M highest-variance embedding dimensions, s being their mean std.
struct TriggerSpec {
    std::vector<std::size_t> dims;
    std::vector<double> pattern;
    double gamma = 0.0;
    double aug_drop_prob = 0.0;
    double lambda_low = 1.0;
    double lambda_high = 1.0;
};

// Static feature-level trigger: a constant stamped over a contiguous window
// of the attacker's feature block.
struct FeatureTriggerSpec {
    std::size_t window_start = 0;
    std::size_t window_len = 0;
    double value = 1.0;
};

// Decision rule of the swap-based label inference: a candidate is marked
// target iff its genuine gradient magnitude was below the batch mean and the
// gradient after swapping in a known-target embedding stayed under 10x it.
bool swap_rule_is_target(double g_prev, double batch_mean, double g_swap);

TriggerSpec build_villain_trigger(const Matrix& clean_embeddings, double m_fraction,
                                  double gamma);

// Adds the (optionally augmented) pattern onto the trigger dims of the given
// rows. aug_rng == nullptr disables augmentation (lambda = 1, no deletion),
// which is the inference-time mode.
void inject_villain_trigger(Matrix& block, std::span<const std::size_t> rows,
                            const TriggerSpec& trig, std::mt19937_64* aug_rng);

void stamp_feature_trigger(Matrix& local, std::span<const std::size_t> rows,
                           const FeatureTriggerSpec& trig);

// Rows (by position in label_flags) of non-target samples independently
// selected with probability eta; non-empty only at the final epoch.
std::vector<int> adaptive_trigger_rows(int epoch, int total_epochs, double eta,
                                       const InferredLabels& label_flags,
                                       std::mt19937_64& rng);

// Per-sample state machine for the swap attack. In each minibatch a bounded
// number of undecided candidates is selected uniformly; first appearance
// records the genuine gradient magnitude and its batch mean, the next one
// swaps in a known-target auxiliary embedding and decides by the rule above.
class SwapLabelInference {
public:
    SwapLabelInference(std::size_t n_train_samples, double budget, std::size_t batch_size);

    void on_upload(Matrix& block, std::span<const int> rows,
                   std::span<const double> aux_target_embedding, std::mt19937_64& rng);
    void on_gradient(const Matrix& grad_block, std::span<const int> rows);

    InferredLabels result() const;
    std::size_t n_decided() const;
    std::size_t candidates_per_batch() const { return candidates_per_batch_; }

private:
    enum class St : std::uint8_t {
        unseen,
        prev_pending,
        prev_done,
        swap_pending,
        decided_target,
        decided_non_target
    };
    struct Entry {
        St st = St::unseen;
        double g_prev = 0.0;
        double mean_prev = 0.0;
    };
    std::vector<Entry> entries_;
    std::size_t candidates_per_batch_ = 0;
};

// Common machinery of both attacks: label inference (swap or ground truth),
// poison-set selection at e_bkd, adaptive row selection at the last epoch,
// learning-rate amplification, instrumentation.
class AttackerAgent : public ParticipantAgent {
public:
    AttackerAgent(AttackPlan plan, int participant_index, const Matrix* local_train,
                  Matrix aux_block, std::vector<int> aux_labels,
                  std::vector<int> ground_truth, std::size_t batch_size, std::uint64_t seed);

    void epoch_begin(int epoch, int total_epochs, VflSession& session) final;
    // Swap-phase bookkeeping; trigger injection lives in the derived classes.
    void transform_embedding(Matrix& block, const BatchContext& ctx) override;
    void observe_gradient(const Matrix& grad_block, const BatchContext& ctx) final;

    const InferredLabels& inferred_labels() const { return inferred_; }
    std::size_t n_inferred_decided() const;
    // Global train rows the agent triggered at any point during training.
    const std::vector<std::uint8_t>& train_triggered_rows() const { return ever_triggered_; }
    const std::vector<std::uint8_t>& poison_set() const { return poison_; }
    const std::vector<std::uint8_t>& adaptive_set() const { return adaptive_; }

protected:
    // Build attack-specific trigger state at the first injection epoch.
    virtual void prepare_injection(VflSession& session) = 0;
    bool injecting(int epoch) const { return epoch >= plan_.e_bkd; }
    bool inferring(int epoch) const { return swap_ != nullptr && epoch < plan_.e_bkd; }

    // Batch-local rows due for the scheduled trigger and, in the final epoch,
    // the adaptive one; marks them in the instrumentation set.
    struct TriggerRows {
        std::vector<std::size_t> scheduled;
        std::vector<std::size_t> adaptive;
    };
    TriggerRows split_trigger_rows(const BatchContext& ctx);

    AttackPlan plan_;
    int index_;
    const Matrix* local_train_;
    Matrix aux_block_;
    std::vector<int> aux_labels_;
    std::mt19937_64 rng_;
    InferredLabels inferred_;
    std::unique_ptr<SwapLabelInference> swap_;
    std::vector<double> aux_target_embedding_;
    std::vector<std::uint8_t> poison_;
    std::vector<std::uint8_t> adaptive_;
    std::vector<std::uint8_t> ever_triggered_;
    bool injection_ready_ = false;
    int current_epoch_ = 0;
    int total_epochs_ = 0;
};

// Embedding-level attack: additive augmented trigger on the uploaded block.
class VillainAgent final : public AttackerAgent {
public:
    using AttackerAgent::AttackerAgent;
    void transform_embedding(Matrix& block, const BatchContext& ctx) final;
    void trigger_embedding(Matrix& block) final;
    const TriggerSpec& trigger() const { return trig_; }

protected:
    void prepare_injection(VflSession& session) final;

private:
    TriggerSpec trig_;
};

// Data-level attack: replace target-label local rows with non-target ones and
// stamp the static feature trigger.
class BadVflAgent final : public AttackerAgent {
public:
    using AttackerAgent::AttackerAgent;
    void transform_features(Matrix& local, const BatchContext& ctx) final;
    void trigger_features(Matrix& local) final;
    const FeatureTriggerSpec& trigger() const { return trig_; }

protected:
    void prepare_injection(VflSession& session) final;

private:
    FeatureTriggerSpec trig_;
    std::vector<int> replacement_; // poison row -> inferred non-target source row
};

std::unique_ptr<AttackerAgent> make_attacker_agent(const AttackPlan& plan, int participant_index,
                                                   const Matrix* local_train, Matrix aux_block,
                                                   std::vector<int> aux_labels,
                                                   std::vector<int> ground_truth,
                                                   std::size_t batch_size, std::uint64_t seed);

// Harness-side check of inference quality against the true labels.
double inference_accuracy(const InferredLabels& inferred, std::span<const int> labels,
                          int target_label);

} // namespace vfl
