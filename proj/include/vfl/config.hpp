#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "vfl/attacks.hpp"
#include "vfl/vflip.hpp"

namespace vfl {

enum class DefenseMode { none, vflip, bdt };

// Flat-sectioned key=value experiment configuration. Unknown keys are
// rejected; the digest is a stable hash of the canonicalized key set.
struct ExperimentConfig {
    struct DataSection {
        std::string source = "synthetic"; // synthetic | csv
        int n_classes = 5;
        std::size_t dim = 40;
        std::size_t k_train = 8000;
        std::size_t k_test = 2000;
        std::size_t k_aux = 500;
        double separation = 2.0;
        double noise_std = 1.0;
        std::string csv_path;
        std::string label_column;
    } data;

    struct VflSection {
        int n_participants = 4;
        int embedding_dim = 16;
        std::vector<std::size_t> bottom_hidden = {32, 32, 32}; // 4-layer FCN bottoms
        std::vector<std::size_t> top_hidden = {32, 16};        // 3-layer FCN top
        int epochs = 30;
        double learning_rate = 0.1;
        std::size_t batch_size = 128;
    } vfl;

    struct AttackSection {
        std::string kind = "none"; // none | badvfl | villain
        std::vector<int> attacker_indices = {1};
        int target_label = 0;
        double budget = 0.5;
        int e_bkd = 5;
        bool label_knowledge = true;
        double lr_amplify = 2.0;
        double gamma = 3.0;
        double m_fraction = 0.75;
        double aug_drop_prob = 0.1;
        double lambda_low = 0.6;
        double lambda_high = 1.2;
        std::size_t trigger_window = 8;
        double trigger_value = 1.0;
        double eta = 0.0;
    } attack;

    struct DefenseSection {
        std::string mode = "none"; // none | vflip | bdt
        double rho = 2.0;
        std::size_t mae_epochs = 20;
        std::size_t mae_batch = 64;
        std::size_t mae_hidden = 64;
        std::size_t mae_latent = 32;
        double lr_n1 = 0.01;
        double lr_11 = 0.1;
        double dropout = 0.1;
        std::string purify_mode = "reconstruct_all"; // reconstruct_all | replace_flagged_only
        double bdt_noise_std = 0.5;
    } defense;

    struct EvalSection {
        std::vector<std::uint64_t> seeds = {1, 2, 3};
        std::string out_dir;
    } eval;

    void validate() const;
    bool has_attack() const { return attack.kind != "none"; }
    AttackKind attack_kind() const;
    DefenseMode defense_mode() const;
    PurifyMode purify_mode() const;
    AttackPlan attack_plan() const;

    // Canonical "section.key=value" lines, sorted; digest is FNV-1a over them.
    std::string canonical() const;
    std::string digest() const;
};

ExperimentConfig parse_config_file(const std::string& path);
ExperimentConfig parse_config_text(const std::string& text);

// One "section.key=value" assignment, e.g. from a --set flag.
void apply_override(ExperimentConfig& cfg, const std::string& assignment);

void save_config(const ExperimentConfig& cfg, const std::string& path);

} // namespace vfl
