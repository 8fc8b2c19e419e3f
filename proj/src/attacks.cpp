#include "vfl/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numeric>
#include <string>

#include "vfl/errors.hpp"
#include "vfl/rng.hpp"

namespace vfl {

void AttackPlan::validate(int n_participants, int epochs) const {
    if (attacker_indices.empty()) throw ConfigError("attack: no attacker indices");
    for (int idx : attacker_indices) {
        if (idx < 0 || idx >= n_participants) {
            throw ConfigError("attack: attacker index " + std::to_string(idx) +
                              " outside [0," + std::to_string(n_participants) + ")");
        }
    }
    if (2 * static_cast<int>(attacker_indices.size()) >= n_participants) {
        throw ConfigError("attack: attacker count must be less than half of " +
                          std::to_string(n_participants) + " participants");
    }
    if (!(budget > 0.0 && budget <= 1.0)) throw ConfigError("attack: budget must be in (0,1]");
    if (e_bkd < 1 || e_bkd >= epochs) {
        throw ConfigError("attack: e_bkd must be in [1, epochs)");
    }
    if (adaptive_eta < 0.0 || adaptive_eta > 1.0) {
        throw ConfigError("attack: adaptive_eta must be in [0,1]");
    }
    if (!(lr_amplify > 0.0)) throw ConfigError("attack: lr_amplify must be > 0");
    if (!(m_fraction > 0.0 && m_fraction <= 1.0)) {
        throw ConfigError("attack: m_fraction must be in (0,1]");
    }
    if (gamma < 0.0) throw ConfigError("attack: gamma must be >= 0");
    if (aug_drop_prob < 0.0 || aug_drop_prob > 1.0) {
        throw ConfigError("attack: aug_drop_prob must be in [0,1]");
    }
    if (lambda_low > lambda_high) throw ConfigError("attack: lambda range is inverted");
}

bool swap_rule_is_target(double g_prev, double batch_mean, double g_swap) {
    return g_prev < batch_mean && g_swap < 10.0 * g_prev;
}

TriggerSpec build_villain_trigger(const Matrix& clean_embeddings, double m_fraction,
                                  double gamma) {
    if (clean_embeddings.cols < 2) {
        throw ConfigError("villain trigger: embedding dim must be >= 2");
    }
    if (clean_embeddings.rows < 2) {
        throw DataError("villain trigger: need at least 2 embedding rows");
    }
    const std::size_t d = clean_embeddings.cols;
    const std::size_t k = clean_embeddings.rows;

    std::vector<double> mean(d, 0.0), stdev(d, 0.0);
    for (std::size_t i = 0; i < k; ++i) {
        const double* r = clean_embeddings.data.data() + i * d;
        for (std::size_t j = 0; j < d; ++j) mean[j] += r[j];
    }
    for (double& m : mean) m /= static_cast<double>(k);
    for (std::size_t i = 0; i < k; ++i) {
        const double* r = clean_embeddings.data.data() + i * d;
        for (std::size_t j = 0; j < d; ++j) {
            double diff = r[j] - mean[j];
            stdev[j] += diff * diff;
        }
    }
    for (double& s : stdev) s = std::sqrt(s / static_cast<double>(k)); // population std

    auto m_count = static_cast<std::size_t>(std::llround(m_fraction * static_cast<double>(d)));
    m_count = std::clamp<std::size_t>(m_count, 1, d);

    std::vector<std::size_t> order(d);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (stdev[a] != stdev[b]) return stdev[a] > stdev[b];
        return a < b;
    });

    TriggerSpec trig;
    trig.gamma = gamma;
    trig.dims.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(m_count));
    std::sort(trig.dims.begin(), trig.dims.end());
    double sigma_bar = 0.0;
    for (std::size_t dim : trig.dims) sigma_bar += stdev[dim];
    sigma_bar /= static_cast<double>(m_count);
    trig.pattern.resize(m_count);
    for (std::size_t kk = 0; kk < m_count; ++kk) {
        trig.pattern[kk] = gamma * sigma_bar * ((kk % 4 < 2) ? 1.0 : -1.0);
    }
    return trig;
}

void inject_villain_trigger(Matrix& block, std::span<const std::size_t> rows,
                            const TriggerSpec& trig, std::mt19937_64* aug_rng) {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::uniform_real_distribution<double> lambda_dist(trig.lambda_low, trig.lambda_high);
    for (std::size_t r : rows) {
        if (r >= block.rows) {
            throw std::out_of_range("villain inject: row " + std::to_string(r) + " out of range");
        }
        double lambda = aug_rng ? lambda_dist(*aug_rng) : 1.0;
        for (std::size_t kk = 0; kk < trig.dims.size(); ++kk) {
            bool keep = aug_rng ? (unit(*aug_rng) >= trig.aug_drop_prob) : true;
            if (keep) block(r, trig.dims[kk]) += lambda * trig.pattern[kk];
        }
    }
}

void stamp_feature_trigger(Matrix& local, std::span<const std::size_t> rows,
                           const FeatureTriggerSpec& trig) {
    if (trig.window_start + trig.window_len > local.cols) {
        throw ShapeError("feature trigger window exceeds block width");
    }
    for (std::size_t r : rows) {
        if (r >= local.rows) {
            throw std::out_of_range("feature trigger: row " + std::to_string(r) + " out of range");
        }
        double* p = local.data.data() + r * local.cols + trig.window_start;
        for (std::size_t j = 0; j < trig.window_len; ++j) p[j] = trig.value;
    }
}

std::vector<int> adaptive_trigger_rows(int epoch, int total_epochs, double eta,
                                       const InferredLabels& label_flags,
                                       std::mt19937_64& rng) {
    if (eta < 0.0 || eta > 1.0) throw ConfigError("adaptive: eta must be in [0,1]");
    std::vector<int> rows;
    if (epoch != total_epochs || eta == 0.0) return rows;
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (std::size_t i = 0; i < label_flags.size(); ++i) {
        if (label_flags[i] != LabelFlag::non_target) continue;
        if (unit(rng) < eta) rows.push_back(static_cast<int>(i));
    }
    return rows;
}

SwapLabelInference::SwapLabelInference(std::size_t n_train_samples, double budget,
                                       std::size_t batch_size)
    : entries_(n_train_samples) {
    candidates_per_batch_ = static_cast<std::size_t>(
        std::llround(3.0 * budget * static_cast<double>(batch_size)));
    candidates_per_batch_ = std::max<std::size_t>(candidates_per_batch_, 1);
}

void SwapLabelInference::on_upload(Matrix& block, std::span<const int> rows,
                                   std::span<const double> aux_target_embedding,
                                   std::mt19937_64& rng) {
    std::vector<std::size_t> eligible;
    for (std::size_t r = 0; r < rows.size(); ++r) {
        St st = entries_[static_cast<std::size_t>(rows[r])].st;
        if (st == St::unseen || st == St::prev_done) eligible.push_back(r);
    }
    std::shuffle(eligible.begin(), eligible.end(), rng);
    std::size_t take = std::min(candidates_per_batch_, eligible.size());
    for (std::size_t e = 0; e < take; ++e) {
        std::size_t r = eligible[e];
        Entry& entry = entries_[static_cast<std::size_t>(rows[r])];
        if (entry.st == St::unseen) {
            entry.st = St::prev_pending;
        } else {
            if (aux_target_embedding.size() != block.cols) {
                throw ShapeError("swap: aux embedding length != block width");
            }
            std::copy(aux_target_embedding.begin(), aux_target_embedding.end(),
                      block.row(r).begin());
            entry.st = St::swap_pending;
        }
    }
}

void SwapLabelInference::on_gradient(const Matrix& grad_block, std::span<const int> rows) {
    double mean = 0.0;
    for (std::size_t r = 0; r < grad_block.rows; ++r) mean += l2_norm(grad_block.row(r));
    mean /= static_cast<double>(grad_block.rows);
    for (std::size_t r = 0; r < rows.size(); ++r) {
        Entry& entry = entries_[static_cast<std::size_t>(rows[r])];
        if (entry.st == St::prev_pending) {
            entry.g_prev = l2_norm(grad_block.row(r));
            entry.mean_prev = mean;
            entry.st = St::prev_done;
        } else if (entry.st == St::swap_pending) {
            double g_swap = l2_norm(grad_block.row(r));
            entry.st = swap_rule_is_target(entry.g_prev, entry.mean_prev, g_swap)
                           ? St::decided_target
                           : St::decided_non_target;
        }
    }
}

InferredLabels SwapLabelInference::result() const {
    InferredLabels flags(entries_.size(), LabelFlag::unknown);
    for (std::size_t i = 0; i < entries_.size(); ++i) {
        if (entries_[i].st == St::decided_target) flags[i] = LabelFlag::target;
        else if (entries_[i].st == St::decided_non_target) flags[i] = LabelFlag::non_target;
    }
    return flags;
}

std::size_t SwapLabelInference::n_decided() const {
    std::size_t n = 0;
    for (const Entry& e : entries_) {
        n += (e.st == St::decided_target || e.st == St::decided_non_target);
    }
    return n;
}

AttackerAgent::AttackerAgent(AttackPlan plan, int participant_index, const Matrix* local_train,
                             Matrix aux_block, std::vector<int> aux_labels,
                             std::vector<int> ground_truth, std::size_t batch_size,
                             std::uint64_t seed)
    : plan_(std::move(plan)),
      index_(participant_index),
      local_train_(local_train),
      aux_block_(std::move(aux_block)),
      aux_labels_(std::move(aux_labels)),
      rng_(make_rng(seed, 31)) {
    const std::size_t n_train = local_train_->rows;
    ever_triggered_.assign(n_train, 0);
    adaptive_.assign(n_train, 0);
    poison_.assign(n_train, 0);
    if (plan_.label_knowledge) {
        if (ground_truth.size() != n_train) {
            throw ConfigError("attack: label knowledge requires train labels");
        }
        inferred_.resize(n_train);
        for (std::size_t i = 0; i < n_train; ++i) {
            inferred_[i] = ground_truth[i] == plan_.target_label ? LabelFlag::target
                                                                 : LabelFlag::non_target;
        }
    } else {
        bool has_target_aux = false;
        for (int y : aux_labels_) has_target_aux |= (y == plan_.target_label);
        if (!has_target_aux) {
            throw ConfigError("attack: auxiliary data has no sample with the target label");
        }
        inferred_.assign(n_train, LabelFlag::unknown);
        swap_ = std::make_unique<SwapLabelInference>(n_train, plan_.budget, batch_size);
    }
}

std::size_t AttackerAgent::n_inferred_decided() const {
    std::size_t n = 0;
    for (LabelFlag f : inferred_) n += (f != LabelFlag::unknown);
    return n;
}

void AttackerAgent::epoch_begin(int epoch, int total_epochs, VflSession& session) {
    current_epoch_ = epoch;
    total_epochs_ = total_epochs;
    session.lr_scale[static_cast<std::size_t>(index_)] =
        injecting(epoch) ? 1.0 : plan_.lr_amplify;

    if (inferring(epoch)) {
        // Known-target auxiliary embedding, recomputed as the bottom model evolves.
        std::size_t aux_row = 0;
        for (std::size_t i = 0; i < aux_labels_.size(); ++i) {
            if (aux_labels_[i] == plan_.target_label) {
                aux_row = i;
                break;
            }
        }
        int aux_id = static_cast<int>(aux_row);
        Matrix one = gather_rows(aux_block_, std::span<const int>(&aux_id, 1));
        Matrix emb = session.bottoms[static_cast<std::size_t>(index_)].forward(one);
        aux_target_embedding_.assign(emb.data.begin(), emb.data.end());
    }

    if (injecting(epoch) && !injection_ready_) {
        if (swap_) inferred_ = swap_->result();
        std::vector<int> target_rows;
        for (std::size_t i = 0; i < inferred_.size(); ++i) {
            if (inferred_[i] == LabelFlag::target) target_rows.push_back(static_cast<int>(i));
        }
        std::shuffle(target_rows.begin(), target_rows.end(), rng_);
        auto n_poison = static_cast<std::size_t>(
            std::llround(plan_.budget * static_cast<double>(target_rows.size())));
        for (std::size_t i = 0; i < std::min(n_poison, target_rows.size()); ++i) {
            poison_[static_cast<std::size_t>(target_rows[i])] = 1;
        }
        prepare_injection(session);
        injection_ready_ = true;
    }

    if (epoch == total_epochs && plan_.adaptive_eta > 0.0) {
        for (int r : adaptive_trigger_rows(epoch, total_epochs, plan_.adaptive_eta, inferred_,
                                           rng_)) {
            adaptive_[static_cast<std::size_t>(r)] = 1;
        }
    }
}

void AttackerAgent::transform_embedding(Matrix& block, const BatchContext& ctx) {
    if (inferring(ctx.epoch)) swap_->on_upload(block, ctx.rows, aux_target_embedding_, rng_);
}

void AttackerAgent::observe_gradient(const Matrix& grad_block, const BatchContext& ctx) {
    if (inferring(ctx.epoch)) swap_->on_gradient(grad_block, ctx.rows);
}

AttackerAgent::TriggerRows AttackerAgent::split_trigger_rows(const BatchContext& ctx) {
    TriggerRows rows;
    for (std::size_t r = 0; r < ctx.rows.size(); ++r) {
        auto g = static_cast<std::size_t>(ctx.rows[r]);
        if (poison_[g]) rows.scheduled.push_back(r);
        else if (ctx.final_epoch && adaptive_[g]) rows.adaptive.push_back(r);
    }
    for (std::size_t r : rows.scheduled) ever_triggered_[static_cast<std::size_t>(ctx.rows[r])] = 1;
    for (std::size_t r : rows.adaptive) ever_triggered_[static_cast<std::size_t>(ctx.rows[r])] = 1;
    return rows;
}

void VillainAgent::prepare_injection(VflSession& session) {
    Matrix clean = session.bottoms[static_cast<std::size_t>(index_)].forward(*local_train_);
    trig_ = build_villain_trigger(clean, plan_.m_fraction, plan_.gamma);
    trig_.aug_drop_prob = plan_.aug_drop_prob;
    trig_.lambda_low = plan_.lambda_low;
    trig_.lambda_high = plan_.lambda_high;
}

void VillainAgent::transform_embedding(Matrix& block, const BatchContext& ctx) {
    AttackerAgent::transform_embedding(block, ctx);
    if (!injecting(ctx.epoch)) return;
    TriggerRows rows = split_trigger_rows(ctx);
    inject_villain_trigger(block, rows.scheduled, trig_, &rng_);
    inject_villain_trigger(block, rows.adaptive, trig_, &rng_);
}

void VillainAgent::trigger_embedding(Matrix& block) {
    if (trig_.dims.empty()) return;
    std::vector<std::size_t> all(block.rows);
    std::iota(all.begin(), all.end(), 0);
    inject_villain_trigger(block, all, trig_, nullptr); // full trigger, no augmentation
}

void BadVflAgent::prepare_injection(VflSession& /*session*/) {
    trig_.window_start = 0;
    trig_.window_len = std::min(plan_.trigger_window, local_train_->cols);
    trig_.value = plan_.trigger_value;

    std::vector<int> non_target;
    for (std::size_t i = 0; i < inferred_.size(); ++i) {
        if (inferred_[i] == LabelFlag::non_target) non_target.push_back(static_cast<int>(i));
    }
    replacement_.assign(local_train_->rows, -1);
    if (non_target.empty()) {
        std::cerr << "warning: badvfl has no inferred non-target sample; "
                     "replacement step skipped\n";
        return;
    }
    std::uniform_int_distribution<std::size_t> pick(0, non_target.size() - 1);
    for (std::size_t i = 0; i < poison_.size(); ++i) {
        if (poison_[i]) replacement_[i] = non_target[pick(rng_)];
    }
}

void BadVflAgent::transform_features(Matrix& local, const BatchContext& ctx) {
    if (!injecting(ctx.epoch)) return;
    TriggerRows rows = split_trigger_rows(ctx);
    // Replace the target-label rows with non-target local data, then stamp;
    // adaptive rows already carry non-target data and only get the stamp.
    for (std::size_t r : rows.scheduled) {
        int src = replacement_[static_cast<std::size_t>(ctx.rows[r])];
        if (src < 0) continue;
        std::copy(local_train_->row(static_cast<std::size_t>(src)).begin(),
                  local_train_->row(static_cast<std::size_t>(src)).end(), local.row(r).begin());
    }
    stamp_feature_trigger(local, rows.scheduled, trig_);
    stamp_feature_trigger(local, rows.adaptive, trig_);
}

void BadVflAgent::trigger_features(Matrix& local) {
    if (trig_.window_len == 0) return;
    std::vector<std::size_t> all(local.rows);
    std::iota(all.begin(), all.end(), 0);
    stamp_feature_trigger(local, all, trig_);
}

std::unique_ptr<AttackerAgent> make_attacker_agent(const AttackPlan& plan, int participant_index,
                                                   const Matrix* local_train, Matrix aux_block,
                                                   std::vector<int> aux_labels,
                                                   std::vector<int> ground_truth,
                                                   std::size_t batch_size, std::uint64_t seed) {
    if (plan.kind == AttackKind::villain) {
        return std::make_unique<VillainAgent>(plan, participant_index, local_train,
                                              std::move(aux_block), std::move(aux_labels),
                                              std::move(ground_truth), batch_size, seed);
    }
    return std::make_unique<BadVflAgent>(plan, participant_index, local_train,
                                         std::move(aux_block), std::move(aux_labels),
                                         std::move(ground_truth), batch_size, seed);
}

double inference_accuracy(const InferredLabels& inferred, std::span<const int> labels,
                          int target_label) {
    std::size_t decided = 0, correct = 0;
    for (std::size_t i = 0; i < inferred.size(); ++i) {
        if (inferred[i] == LabelFlag::unknown) continue;
        ++decided;
        bool is_target = labels[i] == target_label;
        bool said_target = inferred[i] == LabelFlag::target;
        correct += (is_target == said_target);
    }
    if (decided == 0) return std::numeric_limits<double>::quiet_NaN();
    return static_cast<double>(correct) / static_cast<double>(decided);
}

} // namespace vfl
