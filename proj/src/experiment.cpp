#include "vfl/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <limits>
#include <sstream>
#include <thread>

#include "vfl/errors.hpp"
#include "vfl/rng.hpp"

namespace vfl {

namespace {

constexpr double kNan = std::numeric_limits<double>::quiet_NaN();

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

} // namespace

double eval_acc(const VflSession& session, const PartitionedSplit& test, Defense* defense) {
    if (test.n_rows() == 0) throw DataError("eval_acc: empty test split");
    std::vector<int> preds = predict(session, test, defense, {}, false);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < preds.size(); ++i) correct += (preds[i] == test.labels[i]);
    return static_cast<double>(correct) / static_cast<double>(preds.size());
}

double eval_asr(const VflSession& session, const PartitionedSplit& test, const AgentMap& agents,
                int target_label, Defense* defense) {
    if (test.n_rows() == 0) throw DataError("eval_asr: empty test split");
    std::vector<int> preds = predict(session, test, defense, agents, true);
    std::size_t non_target = 0, hits = 0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        if (test.labels[i] == target_label) continue; // ASR excludes true-target rows
        ++non_target;
        hits += (preds[i] == target_label);
    }
    if (non_target == 0) throw DataError("eval_asr: no test rows with a non-target label");
    return static_cast<double>(hits) / static_cast<double>(non_target);
}

Matrix bdt_noise(const Matrix& h, double noise_std, std::mt19937_64& rng) {
    if (noise_std < 0.0) throw ConfigError("bdt: noise_std must be >= 0");
    Matrix out = h;
    if (noise_std == 0.0) return out;
    std::normal_distribution<double> normal(0.0, noise_std);
    for (double& v : out.data) v += normal(rng);
    return out;
}

BdtDefense::BdtDefense(double noise_std, std::uint64_t seed)
    : noise_std_(noise_std), rng_(make_rng(seed, 61)) {
    if (noise_std < 0.0) throw ConfigError("bdt: noise_std must be >= 0");
}

Matrix BdtDefense::apply(const Matrix& h) { return bdt_noise(h, noise_std_, rng_); }

namespace {

Dataset build_dataset(const ExperimentConfig& cfg, std::uint64_t seed) {
    if (cfg.data.source == "csv") {
        return load_csv(cfg.data.csv_path, cfg.data.label_column, cfg.data.n_classes);
    }
    return generate_synthetic(cfg.data.n_classes, cfg.data.dim, cfg.data.k_train,
                              cfg.data.k_test, cfg.data.k_aux, cfg.data.separation,
                              cfg.data.noise_std, seed);
}

SplitFractions fractions_of(const ExperimentConfig& cfg) {
    double total = static_cast<double>(cfg.data.k_train + cfg.data.k_test + cfg.data.k_aux);
    SplitFractions f;
    f.train = static_cast<double>(cfg.data.k_train) / total;
    f.test = static_cast<double>(cfg.data.k_test) / total;
    f.aux = 1.0 - f.train - f.test;
    return f;
}

} // namespace

PipelineState run_training(const ExperimentConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    PipelineState st;
    Dataset ds = build_dataset(cfg, mix_seed(seed, 1));
    st.data = partition_vertical(ds, cfg.vfl.n_participants, fractions_of(cfg),
                                 mix_seed(seed, 2));
    st.session = make_session(st.data.spec.widths(), cfg.vfl.embedding_dim,
                              cfg.vfl.bottom_hidden, cfg.vfl.top_hidden, cfg.data.n_classes,
                              {cfg.vfl.learning_rate, cfg.vfl.batch_size}, mix_seed(seed, 3));
    if (cfg.has_attack()) {
        AttackPlan plan = cfg.attack_plan();
        for (int idx : plan.attacker_indices) {
            std::vector<int> truth =
                plan.label_knowledge ? st.data.train.labels : std::vector<int>{};
            // Coordinated attackers share one seed stream so their scheduling
            // decisions match exactly.
            auto agent = make_attacker_agent(
                plan, idx, &st.data.train.blocks[static_cast<std::size_t>(idx)],
                st.data.aux.blocks[static_cast<std::size_t>(idx)], st.data.aux.labels,
                std::move(truth), cfg.vfl.batch_size, mix_seed(seed, 1000));
            st.agents[idx] = agent.get();
            st.owned_agents.push_back(std::move(agent));
        }
    }
    st.train = train_vfl(st.session, st.data.train, cfg.vfl.epochs, st.agents);
    return st;
}

RunResult run_experiment(const ExperimentConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    auto t0 = std::chrono::steady_clock::now();

    RunResult rr;
    rr.seed = seed;
    rr.config_digest = cfg.digest();
    rr.asr = rr.asr_nodef = kNan;
    rr.ident_precision = rr.ident_recall = kNan;
    rr.label_inference_accuracy = kNan;

    PipelineState st = run_training(cfg, seed);
    const PartitionedDataset& pd = st.data;
    const VflSession& session = st.session;
    const AgentMap& agents = st.agents;
    const TrainResult& tr = st.train;
    int target_label = cfg.attack.target_label;

    if (cfg.has_attack() && !cfg.attack.label_knowledge) {
        rr.label_inference_accuracy = inference_accuracy(
            st.owned_agents.front()->inferred_labels(), pd.train.labels, target_label);
    }

    rr.acc_nodef = eval_acc(session, pd.test, nullptr);
    if (cfg.has_attack()) {
        rr.asr_nodef = eval_asr(session, pd.test, agents, target_label, nullptr);
    }

    switch (cfg.defense_mode()) {
    case DefenseMode::none:
        rr.acc = rr.acc_nodef;
        rr.asr = rr.asr_nodef;
        break;
    case DefenseMode::bdt: {
        BdtDefense acc_def(cfg.defense.bdt_noise_std, mix_seed(seed, 4));
        rr.acc = eval_acc(session, pd.test, &acc_def);
        if (cfg.has_attack()) {
            BdtDefense asr_def(cfg.defense.bdt_noise_std, mix_seed(seed, 5));
            rr.asr = eval_asr(session, pd.test, agents, target_label, &asr_def);
        }
        break;
    }
    case DefenseMode::vflip: {
        MaeConfig mcfg;
        mcfg.n_participants = cfg.vfl.n_participants;
        mcfg.block_dim = cfg.vfl.embedding_dim;
        mcfg.hidden = cfg.defense.mae_hidden;
        mcfg.latent = cfg.defense.mae_latent;
        mcfg.epochs = cfg.defense.mae_epochs;
        mcfg.lr_n1 = cfg.defense.lr_n1;
        mcfg.lr_11 = cfg.defense.lr_11;
        mcfg.dropout_prob = cfg.defense.dropout;
        mcfg.batch_size = cfg.defense.mae_batch;
        mcfg.seed = mix_seed(seed, 6);
        MaeTrainResult mt = train_mae(tr.store.h, mcfg);
        rr.mae_epoch_loss = mt.epoch_loss;
        ThresholdTable th = fit_thresholds(mt.mae, tr.store.h, cfg.defense.rho);

        VflipDefense defense(&mt.mae, &th, cfg.purify_mode());
        rr.acc = eval_acc(session, pd.test, &defense);
        Matrix flags_clean = defense.flags();
        defense.reset();

        Matrix flags_trig;
        if (cfg.has_attack()) {
            rr.asr = eval_asr(session, pd.test, agents, target_label, &defense);
            flags_trig = defense.flags();
            defense.reset();
        }

        const int n = cfg.vfl.n_participants;
        rr.flag_rate_clean.assign(static_cast<std::size_t>(n), 0.0);
        for (std::size_t r = 0; r < flags_clean.rows; ++r) {
            for (int i = 0; i < n; ++i) {
                rr.flag_rate_clean[static_cast<std::size_t>(i)] +=
                    flags_clean(r, static_cast<std::size_t>(i));
            }
        }
        for (double& v : rr.flag_rate_clean) v /= static_cast<double>(flags_clean.rows);

        if (cfg.has_attack()) {
            // Triggered-pass rates and identification quality are measured on
            // rows whose true label differs from the target; the ground truth
            // for "triggered" is exactly the attacker set.
            std::vector<std::uint8_t> is_attacker(static_cast<std::size_t>(n), 0);
            for (int idx : cfg.attack.attacker_indices) {
                is_attacker[static_cast<std::size_t>(idx)] = 1;
            }
            rr.flag_rate_trig.assign(static_cast<std::size_t>(n), 0.0);
            double tp = 0, fp = 0, fn = 0;
            std::size_t trig_rows = 0;
            for (std::size_t r = 0; r < flags_trig.rows; ++r) {
                if (pd.test.labels[r] == target_label) continue;
                ++trig_rows;
                for (int i = 0; i < n; ++i) {
                    double f = flags_trig(r, static_cast<std::size_t>(i));
                    rr.flag_rate_trig[static_cast<std::size_t>(i)] += f;
                    if (is_attacker[static_cast<std::size_t>(i)]) {
                        tp += f;
                        fn += 1.0 - f;
                    } else {
                        fp += f;
                    }
                }
            }
            for (double& v : rr.flag_rate_trig) {
                v /= trig_rows > 0 ? static_cast<double>(trig_rows) : 1.0;
            }
            for (std::size_t r = 0; r < flags_clean.rows; ++r) {
                for (int i = 0; i < n; ++i) fp += flags_clean(r, static_cast<std::size_t>(i));
            }
            rr.ident_precision = (tp + fp) > 0.0 ? tp / (tp + fp) : 1.0;
            rr.ident_recall = (tp + fn) > 0.0 ? tp / (tp + fn) : 1.0;
        }
        break;
    }
    }

    rr.runtime_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return rr;
}

namespace {

// Fixed-size pool running fn(i) for i in [0, n); exceptions surface per index.
void run_indexed(std::size_t n, unsigned max_workers,
                 const std::function<void(std::size_t)>& fn) {
    unsigned workers = std::min<unsigned>(max_workers == 0 ? 1 : max_workers,
                                          static_cast<unsigned>(n));
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (unsigned w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            while (true) {
                std::size_t i = next.fetch_add(1);
                if (i >= n) break;
                fn(i);
            }
        });
    }
    for (std::thread& t : pool) t.join();
}

} // namespace

std::vector<RunResult> run_many(const std::vector<std::pair<ExperimentConfig, std::uint64_t>>& jobs,
                                unsigned max_workers) {
    std::vector<RunResult> out(jobs.size());
    std::vector<std::exception_ptr> errors(jobs.size());
    run_indexed(jobs.size(), max_workers, [&](std::size_t i) {
        try {
            out[i] = run_experiment(jobs[i].first, jobs[i].second);
        } catch (...) {
            errors[i] = std::current_exception();
        }
    });
    for (const auto& err : errors) {
        if (err) std::rethrow_exception(err);
    }
    return out;
}

SweepAxis sweep_axis_from_name(const std::string& name) {
    if (name == "poisoning_budget") return SweepAxis::poisoning_budget;
    if (name == "gamma") return SweepAxis::gamma;
    if (name == "rho") return SweepAxis::rho;
    if (name == "eta") return SweepAxis::eta;
    throw ConfigError("sweep: unknown axis '" + name +
                      "' (expected poisoning_budget, gamma, rho or eta)");
}

std::string sweep_axis_name(SweepAxis axis) {
    switch (axis) {
    case SweepAxis::poisoning_budget: return "poisoning_budget";
    case SweepAxis::gamma: return "gamma";
    case SweepAxis::rho: return "rho";
    case SweepAxis::eta: return "eta";
    }
    return "?";
}

void apply_sweep_value(ExperimentConfig& cfg, SweepAxis axis, double value) {
    switch (axis) {
    case SweepAxis::poisoning_budget: cfg.attack.budget = value; break;
    case SweepAxis::gamma: cfg.attack.gamma = value; break;
    case SweepAxis::rho: cfg.defense.rho = value; break;
    case SweepAxis::eta: cfg.attack.eta = value; break;
    }
}

std::vector<SweepRow> sweep(const ExperimentConfig& base, const SweepGrid& grid,
                            unsigned max_workers) {
    std::vector<SweepRow> rows;
    for (double value : grid.values) {
        for (std::uint64_t seed : grid.seeds) {
            SweepRow row;
            row.axis = grid.axis;
            row.value = value;
            row.seed = seed;
            rows.push_back(std::move(row));
        }
    }
    run_indexed(rows.size(), max_workers, [&](std::size_t i) {
        ExperimentConfig cfg = base;
        apply_sweep_value(cfg, rows[i].axis, rows[i].value);
        try {
            rows[i].result = run_experiment(cfg, rows[i].seed);
        } catch (const std::exception& e) {
            rows[i].failed = true;
            rows[i].error = e.what();
            rows[i].result.config_digest = cfg.digest();
            rows[i].result.seed = rows[i].seed;
            rows[i].result.acc = rows[i].result.asr = kNan;
            rows[i].result.ident_precision = rows[i].result.ident_recall = kNan;
        }
    });
    return rows;
}

void write_sweep_csv(const std::vector<SweepRow>& rows, int n_participants,
                     const std::string& path) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot write sweep results to '" + path + "'");
    os << "axis,value,seed,acc,asr";
    for (int i = 0; i < n_participants; ++i) os << ",flag_rate_clean_" << i;
    for (int i = 0; i < n_participants; ++i) os << ",flag_rate_trig_" << i;
    os << ",ident_precision,ident_recall,runtime_s,config_digest\n";
    for (const SweepRow& row : rows) {
        const RunResult& r = row.result;
        const std::string axis = row.axis_label.empty() ? sweep_axis_name(row.axis) : row.axis_label;
        os << axis << "," << fmt(row.value) << "," << row.seed << "," << fmt(r.acc) << ","
           << fmt(r.asr);
        for (int i = 0; i < n_participants; ++i) {
            double v = static_cast<std::size_t>(i) < r.flag_rate_clean.size()
                           ? r.flag_rate_clean[static_cast<std::size_t>(i)]
                           : kNan;
            os << "," << fmt(v);
        }
        for (int i = 0; i < n_participants; ++i) {
            double v = static_cast<std::size_t>(i) < r.flag_rate_trig.size()
                           ? r.flag_rate_trig[static_cast<std::size_t>(i)]
                           : kNan;
            os << "," << fmt(v);
        }
        os << "," << fmt(r.ident_precision) << "," << fmt(r.ident_recall) << ","
           << fmt(r.runtime_s) << "," << r.config_digest << "\n";
        if (row.failed) os << "# run failed: " << row.error << "\n";
    }
    if (!os) throw IoError("write failed for '" + path + "'");
}

void dump_scores(const Mae& mae, const ThresholdTable& th, const Matrix& clean_rows,
                 std::span<const int> clean_labels, const Matrix& triggered_rows,
                 std::span<const int> triggered_labels, const std::string& path,
                 const std::string& config_digest) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot write score dump to '" + path + "'");
    os << "row_id,source_j,target_i,score,threshold_i,true_label,triggered_flag\n";
    const int n = mae.n_participants;
    int row_id = 0;
    auto emit = [&](const Matrix& h, std::span<const int> labels, int triggered) {
        if (h.rows == 0) return;
        Matrix scores = anomaly_scores(mae, h);
        for (std::size_t r = 0; r < h.rows; ++r, ++row_id) {
            for (int j = 0; j < n; ++j) {
                for (int i = 0; i < n; ++i) {
                    if (i == j) continue;
                    double s = scores(r, static_cast<std::size_t>(j) * static_cast<std::size_t>(n) +
                                             static_cast<std::size_t>(i));
                    os << row_id << "," << j << "," << i << "," << fmt(s) << ","
                       << fmt(th.t[static_cast<std::size_t>(i)]) << "," << labels[r] << ","
                       << triggered << "\n";
                }
            }
        }
    };
    emit(clean_rows, clean_labels, 0);
    emit(triggered_rows, triggered_labels, 1);
    if (!config_digest.empty()) os << "# config_digest=" << config_digest << "\n";
    if (!os) throw IoError("write failed for '" + path + "'");
}

std::vector<ScoreDumpRow> read_score_dump(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open score dump '" + path + "'");
    std::vector<ScoreDumpRow> rows;
    std::string line;
    bool header = true;
    while (std::getline(is, line)) {
        if (line.empty() || line.front() == '#') continue;
        if (header) {
            header = false;
            continue;
        }
        std::stringstream ss(line);
        std::string cell;
        ScoreDumpRow r{};
        std::getline(ss, cell, ','); r.row_id = std::stoi(cell);
        std::getline(ss, cell, ','); r.source_j = std::stoi(cell);
        std::getline(ss, cell, ','); r.target_i = std::stoi(cell);
        std::getline(ss, cell, ','); r.score = std::stod(cell);
        std::getline(ss, cell, ','); r.threshold = std::stod(cell);
        std::getline(ss, cell, ','); r.true_label = std::stoi(cell);
        std::getline(ss, cell, ','); r.triggered_flag = std::stoi(cell);
        rows.push_back(r);
    }
    return rows;
}

} // namespace vfl
