// Command-line front end: config-driven training, attack/defense evaluation,
// ablation sweeps, anomaly-score dumps and the gradient oracle.
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "vfl/config.hpp"
#include "vfl/errors.hpp"
#include "vfl/experiment.hpp"
#include "vfl/grad_check.hpp"
#include "vfl/rng.hpp"

namespace {

using namespace vfl;

struct CommonOpts {
    std::string config_path;
    std::vector<std::string> overrides;
    std::string out_dir;
    std::uint64_t seed = 0;
    bool seed_set = false;
    bool force = false;
};

void add_common(CLI::App* cmd, CommonOpts& opts, bool config_required = true) {
    cmd->add_option("config", opts.config_path, "experiment config file")
        ->required(config_required);
    cmd->add_option("--set", opts.overrides, "override, e.g. --set defense.rho=2.5");
    cmd->add_option("--out", opts.out_dir, "output directory (default: eval.out_dir, "
                                           "then $VFL_LAB_OUT, then .)");
    cmd->add_option("--seed", opts.seed, "override the run seed")->each([&opts](const std::string&) {
        opts.seed_set = true;
    });
    cmd->add_flag("--force", opts.force, "overwrite artifacts with a different config digest");
}

ExperimentConfig load_config(const CommonOpts& opts) {
    ExperimentConfig cfg = parse_config_file(opts.config_path);
    for (const std::string& assignment : opts.overrides) apply_override(cfg, assignment);
    cfg.validate();
    return cfg;
}

std::string resolve_out_dir(const CommonOpts& opts, const ExperimentConfig& cfg) {
    std::string dir = opts.out_dir;
    if (dir.empty()) dir = cfg.eval.out_dir;
    if (dir.empty()) {
        const char* env = std::getenv("VFL_LAB_OUT");
        if (env && *env) dir = env;
    }
    if (dir.empty()) dir = ".";
    std::filesystem::create_directories(dir);
    return dir;
}

std::uint64_t resolve_seed(const CommonOpts& opts, const ExperimentConfig& cfg) {
    return opts.seed_set ? opts.seed : cfg.eval.seeds.front();
}

// Artifacts embed the config digest; refuse to clobber one written under a
// different configuration unless forced.
void check_overwrite(const std::string& path, const std::string& digest, bool force) {
    if (force || !std::filesystem::exists(path)) return;
    std::ifstream is(path);
    if (!is) return;
    std::stringstream buf;
    buf << is.rdbuf();
    const std::string text = buf.str();
    auto pos = text.find("config_digest=");
    std::string existing;
    if (pos != std::string::npos) {
        pos += std::string("config_digest=").size();
        while (pos < text.size() && std::isxdigit(static_cast<unsigned char>(text[pos]))) {
            existing.push_back(text[pos++]);
        }
    } else if (text.rfind("axis,", 0) == 0) {
        // results CSV: digest is the last cell of the first data row
        auto nl = text.find('\n');
        if (nl != std::string::npos) {
            auto end = text.find('\n', nl + 1);
            std::string row = text.substr(nl + 1, end == std::string::npos ? std::string::npos
                                                                           : end - nl - 1);
            auto comma = row.rfind(',');
            if (comma != std::string::npos) existing = row.substr(comma + 1);
        }
    }
    if (!existing.empty() && existing != digest) {
        throw ConfigError("refusing to overwrite '" + path + "': existing config digest " +
                          existing + " != " + digest + " (use --force)");
    }
}

void write_report(const ExperimentConfig& cfg, const RunResult& result,
                  const std::string& label, const std::string& path, bool force) {
    check_overwrite(path, cfg.digest(), force);
    SweepRow row;
    row.axis_label = label;
    row.value = 0.0;
    row.seed = result.seed;
    row.result = result;
    write_sweep_csv({row}, cfg.vfl.n_participants, path);
}

void save_trigger_specs(const PipelineState& st, const std::string& dir,
                        const std::string& digest) {
    for (const auto& agent : st.owned_agents) {
        int idx = -1;
        for (const auto& [k, v] : st.agents) {
            if (v == agent.get()) idx = k;
        }
        std::ofstream os(dir + "/attack_" + std::to_string(idx) + ".txt");
        if (!os) throw IoError("cannot write attack spec in '" + dir + "'");
        os << "config_digest=" << digest << "\n";
        if (const auto* villain = dynamic_cast<const VillainAgent*>(agent.get())) {
            const TriggerSpec& t = villain->trigger();
            os << "kind=villain\n";
            os << "gamma=" << t.gamma << "\n";
            os << "dims=";
            for (std::size_t i = 0; i < t.dims.size(); ++i) os << (i ? "," : "") << t.dims[i];
            os << "\npattern=";
            char buf[40];
            for (std::size_t i = 0; i < t.pattern.size(); ++i) {
                std::snprintf(buf, sizeof(buf), "%.17g", t.pattern[i]);
                os << (i ? "," : "") << buf;
            }
            os << "\n";
        } else if (const auto* bad = dynamic_cast<const BadVflAgent*>(agent.get())) {
            const FeatureTriggerSpec& t = bad->trigger();
            os << "kind=badvfl\n";
            os << "window_start=" << t.window_start << "\n";
            os << "window_len=" << t.window_len << "\n";
            os << "value=" << t.value << "\n";
        }
    }
}

void print_summary(const char* cmd, const RunResult& r) {
    std::printf("%s: acc=%.4f", cmd, r.acc);
    if (std::isfinite(r.asr)) std::printf(" asr=%.4f", r.asr);
    std::printf(" seed=%llu digest=%s\n", static_cast<unsigned long long>(r.seed),
                r.config_digest.c_str());
}

int cmd_train(const CommonOpts& opts) {
    ExperimentConfig cfg = load_config(opts);
    std::string out = resolve_out_dir(opts, cfg);
    std::uint64_t seed = resolve_seed(opts, cfg);
    std::string digest = cfg.digest();

    check_overwrite(out + "/session/manifest.txt", digest, opts.force);
    PipelineState st = run_training(cfg, seed);
    save_session(st.session, out + "/session", digest, seed);
    save_trigger_specs(st, out, digest);

    RunResult r;
    r.seed = seed;
    r.config_digest = digest;
    r.acc = eval_acc(st.session, st.data.test, nullptr);
    r.asr = cfg.has_attack()
                ? eval_asr(st.session, st.data.test, st.agents, cfg.attack.target_label, nullptr)
                : std::numeric_limits<double>::quiet_NaN();
    print_summary("train", r);
    std::printf("session checkpoint: %s/session\n", out.c_str());
    return 0;
}

int cmd_eval(const CommonOpts& opts, bool with_defense) {
    ExperimentConfig cfg = load_config(opts);
    if (!with_defense) cfg.defense.mode = "none";
    std::string out = resolve_out_dir(opts, cfg);
    std::uint64_t seed = resolve_seed(opts, cfg);
    RunResult r = run_experiment(cfg, seed);
    const char* label = with_defense ? "defend-eval" : "attack-eval";
    write_report(cfg, r, label, out + "/report_" + std::string(label) + ".csv", opts.force);
    print_summary(label, r);
    return 0;
}

int cmd_sweep(const CommonOpts& opts, const std::string& axis_name,
              const std::string& values_csv, unsigned workers) {
    ExperimentConfig cfg = load_config(opts);
    SweepGrid grid;
    grid.axis = sweep_axis_from_name(axis_name);
    std::stringstream ss(values_csv);
    std::string tok;
    while (std::getline(ss, tok, ',')) grid.values.push_back(std::stod(tok));
    if (grid.values.empty() && !values_csv.empty()) {
        throw ConfigError("sweep: no values parsed from '" + values_csv + "'");
    }
    grid.seeds = cfg.eval.seeds;

    std::string out = resolve_out_dir(opts, cfg);
    std::string path = out + "/sweep_" + axis_name + ".csv";
    check_overwrite(path, cfg.digest(), opts.force);
    std::vector<SweepRow> rows = sweep(cfg, grid, workers);
    write_sweep_csv(rows, cfg.vfl.n_participants, path);
    std::size_t failed = 0;
    for (const SweepRow& row : rows) failed += row.failed;
    std::printf("sweep: %zu runs (%zu failed) -> %s\n", rows.size(), failed, path.c_str());
    return 0;
}

int cmd_score_dump(const CommonOpts& opts) {
    ExperimentConfig cfg = load_config(opts);
    if (!cfg.has_attack()) throw ConfigError("score-dump: configure an attack first");
    std::string out = resolve_out_dir(opts, cfg);
    std::uint64_t seed = resolve_seed(opts, cfg);
    std::string digest = cfg.digest();

    PipelineState st = run_training(cfg, seed);
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
    MaeTrainResult mt = train_mae(st.train.store.h, mcfg);
    ThresholdTable th = fit_thresholds(mt.mae, st.train.store.h, cfg.defense.rho);

    EmbeddingBatch clean = collect_embeddings(st.session, st.data.test, st.agents, false);
    EmbeddingBatch triggered = collect_embeddings(st.session, st.data.test, st.agents, true);
    // Triggered rows restricted to non-target labels, the attack-relevant set.
    std::vector<int> keep;
    for (std::size_t i = 0; i < st.data.test.labels.size(); ++i) {
        if (st.data.test.labels[i] != cfg.attack.target_label) keep.push_back(static_cast<int>(i));
    }
    Matrix trig_rows = gather_rows(triggered.concat, keep);
    std::vector<int> trig_labels;
    for (int i : keep) trig_labels.push_back(st.data.test.labels[static_cast<std::size_t>(i)]);

    std::string path = out + "/scores.csv";
    check_overwrite(path, digest, opts.force);
    dump_scores(mt.mae, th, clean.concat, st.data.test.labels, trig_rows, trig_labels, path,
                digest);
    save_mae(mt.mae, th, out + "/mae", digest);
    std::printf("score-dump: %s (mae checkpoint in %s/mae)\n", path.c_str(), out.c_str());
    return 0;
}

int cmd_grad_check(int models, double eps, std::uint64_t seed) {
    double worst = grad_check_suite(models, seed, eps);
    std::printf("grad-check: max relative error %.3g over %d models (threshold 1e-4)\n", worst,
                models);
    return worst < 1e-4 ? 0 : 1;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"split-architecture vertical federated learning lab: backdoor attacks "
                 "(BadVFL, VILLAIN) and the VFLIP inference-time defense"};
    app.require_subcommand(1);

    CommonOpts train_opts, attack_opts, defend_opts, sweep_opts, dump_opts;
    std::string sweep_axis, sweep_values;
    unsigned sweep_workers = 2;
    int gc_models = 20;
    double gc_eps = 1e-6;
    std::uint64_t gc_seed = 1;

    add_common(app.add_subcommand("train", "train a VFL session and save checkpoints"),
               train_opts);
    add_common(app.add_subcommand("attack-eval", "train with the configured attack, report "
                                                 "no-defense ACC/ASR"),
               attack_opts);
    add_common(app.add_subcommand("defend-eval", "train, defend at inference, report ACC/ASR"),
               defend_opts);
    CLI::App* sweep_cmd =
        app.add_subcommand("sweep", "run a grid over one axis, write a results CSV");
    add_common(sweep_cmd, sweep_opts);
    sweep_cmd->add_option("--axis", sweep_axis, "poisoning_budget | gamma | rho | eta")
        ->required();
    sweep_cmd->add_option("--values", sweep_values, "comma-separated axis values")->required();
    sweep_cmd->add_option("--workers", sweep_workers, "parallel runs (default 2)");
    add_common(app.add_subcommand("score-dump", "dump clean vs triggered anomaly scores"),
               dump_opts);
    CLI::App* gc_cmd = app.add_subcommand("grad-check", "finite-difference gradient oracle");
    gc_cmd->add_option("--models", gc_models, "number of random networks (default 20)");
    gc_cmd->add_option("--eps", gc_eps, "finite-difference step (default 1e-6)");
    gc_cmd->add_option("--seed", gc_seed, "oracle seed");

    CLI11_PARSE(app, argc, argv);

    try {
        if (app.got_subcommand("train")) return cmd_train(train_opts);
        if (app.got_subcommand("attack-eval")) return cmd_eval(attack_opts, false);
        if (app.got_subcommand("defend-eval")) return cmd_eval(defend_opts, true);
        if (app.got_subcommand("sweep")) {
            return cmd_sweep(sweep_opts, sweep_axis, sweep_values, sweep_workers);
        }
        if (app.got_subcommand("score-dump")) return cmd_score_dump(dump_opts);
        if (app.got_subcommand("grad-check")) return cmd_grad_check(gc_models, gc_eps, gc_seed);
    } catch (const vfl::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const vfl::DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
