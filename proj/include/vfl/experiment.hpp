#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "vfl/attacks.hpp"
#include "vfl/config.hpp"
#include "vfl/protocol.hpp"
#include "vfl/vflip.hpp"

namespace vfl {

// Clean accuracy: fraction of test rows predicted as their true label, with
// attack triggering disabled.
double eval_acc(const VflSession& session, const PartitionedSplit& test, Defense* defense);

// Attack success rate: fraction of triggered test rows with true label !=
// target that are predicted as the target label.
double eval_asr(const VflSession& session, const PartitionedSplit& test, const AgentMap& agents,
                int target_label, Defense* defense);

// BDT baseline: i.i.d. zero-mean Gaussian noise on every embedding coordinate.
Matrix bdt_noise(const Matrix& h, double noise_std, std::mt19937_64& rng);

class BdtDefense final : public Defense {
public:
    BdtDefense(double noise_std, std::uint64_t seed);
    Matrix apply(const Matrix& h) override;

private:
    double noise_std_;
    std::mt19937_64 rng_;
};

class IdentityDefense final : public Defense {
public:
    Matrix apply(const Matrix& h) override { return h; }
};

// Trained pipeline state shared by the eval paths and the CLI artifacts.
struct PipelineState {
    PartitionedDataset data;
    VflSession session;
    std::vector<std::unique_ptr<AttackerAgent>> owned_agents;
    AgentMap agents;
    TrainResult train;
};

// Dataset generation, partitioning, session setup, attacker construction and
// VFL training, with all RNG streams derived from the given seed.
PipelineState run_training(const ExperimentConfig& cfg, std::uint64_t seed);

// Everything a single full train -> attack -> defend -> eval run reports.
struct RunResult {
    double acc = 0.0;       // under the configured defense mode
    double asr = 0.0;       // NaN when no attack is configured
    double acc_nodef = 0.0; // same trained session, no defense
    double asr_nodef = 0.0;
    std::vector<double> flag_rate_clean; // per participant, vflip only (else empty)
    std::vector<double> flag_rate_trig;  // over triggered non-target test rows
    double ident_precision = 0.0;
    double ident_recall = 0.0;
    double label_inference_accuracy = 0.0; // NaN unless a swap inference ran
    double runtime_s = 0.0;
    std::uint64_t seed = 0;
    std::string config_digest;
    std::vector<double> mae_epoch_loss; // empty unless vflip ran
};

RunResult run_experiment(const ExperimentConfig& cfg, std::uint64_t seed);

// Bounded worker pool; results come back in input order regardless of the
// completion order, and every run derives its RNG streams from its own seed.
std::vector<RunResult> run_many(const std::vector<std::pair<ExperimentConfig, std::uint64_t>>& jobs,
                                unsigned max_workers = 2);

enum class SweepAxis { poisoning_budget, gamma, rho, eta };
SweepAxis sweep_axis_from_name(const std::string& name);
std::string sweep_axis_name(SweepAxis axis);
void apply_sweep_value(ExperimentConfig& cfg, SweepAxis axis, double value);

struct SweepGrid {
    SweepAxis axis = SweepAxis::rho;
    std::vector<double> values;
    std::vector<std::uint64_t> seeds;
};

struct SweepRow {
    SweepAxis axis = SweepAxis::rho;
    std::string axis_label; // written instead of the axis name when nonempty
    double value = 0.0;
    std::uint64_t seed = 0;
    RunResult result;
    bool failed = false;
    std::string error;
};

// One full run per (value, seed), in grid order. A failing run is recorded in
// its row and the sweep continues.
std::vector<SweepRow> sweep(const ExperimentConfig& base, const SweepGrid& grid,
                            unsigned max_workers = 2);

// Results CSV, header:
// axis,value,seed,acc,asr,flag_rate_clean_<i>...,flag_rate_trig_<i>...,
// ident_precision,ident_recall,runtime_s,config_digest
void write_sweep_csv(const std::vector<SweepRow>& rows, int n_participants,
                     const std::string& path);

// Score-dump CSV with columns (row_id,source_j,target_i,score,threshold_i,
// true_label,triggered_flag); one row per ordered participant pair per input
// row, clean rows first.
void dump_scores(const Mae& mae, const ThresholdTable& th, const Matrix& clean_rows,
                 std::span<const int> clean_labels, const Matrix& triggered_rows,
                 std::span<const int> triggered_labels, const std::string& path,
                 const std::string& config_digest = "");

struct ScoreDumpRow {
    int row_id, source_j, target_i, true_label, triggered_flag;
    double score, threshold;
};
std::vector<ScoreDumpRow> read_score_dump(const std::string& path);

} // namespace vfl
