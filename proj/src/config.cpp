#include "vfl/config.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "vfl/errors.hpp"

namespace vfl {

namespace {

std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t");
    return s.substr(a, b - a + 1);
}

double to_double(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        double d = std::stod(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return d;
    } catch (const std::exception&) {
        throw ConfigError("config: '" + key + "' expects a number, got '" + v + "'");
    }
}

long long to_int(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        long long i = std::stoll(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return i;
    } catch (const std::exception&) {
        throw ConfigError("config: '" + key + "' expects an integer, got '" + v + "'");
    }
}

bool to_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ConfigError("config: '" + key + "' expects true/false, got '" + v + "'");
}

template <typename T, typename Fn>
std::vector<T> to_list(const std::string& key, const std::string& v, Fn convert) {
    std::vector<T> out;
    if (trim(v).empty()) return out;
    std::stringstream ss(v);
    std::string tok;
    while (std::getline(ss, tok, ',')) out.push_back(convert(key, trim(tok)));
    return out;
}

std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

template <typename T>
std::string fmt_list(const std::vector<T>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(v[i]);
    }
    return out;
}

void set_key(ExperimentConfig& cfg, const std::string& section, const std::string& key,
             const std::string& value) {
    const std::string full = section + "." + key;
    auto as_size = [&](const std::string& k, const std::string& v) {
        long long i = to_int(k, v);
        if (i < 0) throw ConfigError("config: '" + k + "' must be >= 0");
        return static_cast<std::size_t>(i);
    };
    if (section == "data") {
        if (key == "source") cfg.data.source = value;
        else if (key == "n_classes") cfg.data.n_classes = static_cast<int>(to_int(full, value));
        else if (key == "dim") cfg.data.dim = as_size(full, value);
        else if (key == "k_train") cfg.data.k_train = as_size(full, value);
        else if (key == "k_test") cfg.data.k_test = as_size(full, value);
        else if (key == "k_aux") cfg.data.k_aux = as_size(full, value);
        else if (key == "separation") cfg.data.separation = to_double(full, value);
        else if (key == "noise_std") cfg.data.noise_std = to_double(full, value);
        else if (key == "csv_path") cfg.data.csv_path = value;
        else if (key == "label_column") cfg.data.label_column = value;
        else throw ConfigError("config: unknown key '" + full + "'");
    } else if (section == "vfl") {
        if (key == "n_participants") cfg.vfl.n_participants = static_cast<int>(to_int(full, value));
        else if (key == "embedding_dim") cfg.vfl.embedding_dim = static_cast<int>(to_int(full, value));
        else if (key == "bottom_hidden")
            cfg.vfl.bottom_hidden = to_list<std::size_t>(full, value, as_size);
        else if (key == "top_hidden")
            cfg.vfl.top_hidden = to_list<std::size_t>(full, value, as_size);
        else if (key == "epochs") cfg.vfl.epochs = static_cast<int>(to_int(full, value));
        else if (key == "learning_rate") cfg.vfl.learning_rate = to_double(full, value);
        else if (key == "batch_size") cfg.vfl.batch_size = as_size(full, value);
        else throw ConfigError("config: unknown key '" + full + "'");
    } else if (section == "attack") {
        if (key == "kind") cfg.attack.kind = value;
        else if (key == "attacker_indices")
            cfg.attack.attacker_indices = to_list<int>(full, value, [](const std::string& k, const std::string& v) {
                return static_cast<int>(to_int(k, v));
            });
        else if (key == "target_label") cfg.attack.target_label = static_cast<int>(to_int(full, value));
        else if (key == "budget") cfg.attack.budget = to_double(full, value);
        else if (key == "e_bkd") cfg.attack.e_bkd = static_cast<int>(to_int(full, value));
        else if (key == "label_knowledge") cfg.attack.label_knowledge = to_bool(full, value);
        else if (key == "lr_amplify") cfg.attack.lr_amplify = to_double(full, value);
        else if (key == "gamma") cfg.attack.gamma = to_double(full, value);
        else if (key == "m_fraction") cfg.attack.m_fraction = to_double(full, value);
        else if (key == "aug_drop_prob") cfg.attack.aug_drop_prob = to_double(full, value);
        else if (key == "lambda_low") cfg.attack.lambda_low = to_double(full, value);
        else if (key == "lambda_high") cfg.attack.lambda_high = to_double(full, value);
        else if (key == "trigger_window") cfg.attack.trigger_window = as_size(full, value);
        else if (key == "trigger_value") cfg.attack.trigger_value = to_double(full, value);
        else if (key == "eta") cfg.attack.eta = to_double(full, value);
        else throw ConfigError("config: unknown key '" + full + "'");
    } else if (section == "defense") {
        if (key == "mode") cfg.defense.mode = value;
        else if (key == "rho") cfg.defense.rho = to_double(full, value);
        else if (key == "mae_epochs") cfg.defense.mae_epochs = as_size(full, value);
        else if (key == "mae_batch") cfg.defense.mae_batch = as_size(full, value);
        else if (key == "mae_hidden") cfg.defense.mae_hidden = as_size(full, value);
        else if (key == "mae_latent") cfg.defense.mae_latent = as_size(full, value);
        else if (key == "lr_n1") cfg.defense.lr_n1 = to_double(full, value);
        else if (key == "lr_11") cfg.defense.lr_11 = to_double(full, value);
        else if (key == "dropout") cfg.defense.dropout = to_double(full, value);
        else if (key == "purify_mode") cfg.defense.purify_mode = value;
        else if (key == "bdt_noise_std") cfg.defense.bdt_noise_std = to_double(full, value);
        else throw ConfigError("config: unknown key '" + full + "'");
    } else if (section == "eval") {
        if (key == "seeds")
            cfg.eval.seeds = to_list<std::uint64_t>(full, value, [](const std::string& k, const std::string& v) {
                long long i = to_int(k, v);
                if (i < 0) throw ConfigError("config: '" + k + "' seeds must be >= 0");
                return static_cast<std::uint64_t>(i);
            });
        else if (key == "out_dir") cfg.eval.out_dir = value;
        else throw ConfigError("config: unknown key '" + full + "'");
    } else {
        throw ConfigError("config: unknown section '" + section + "'");
    }
}

} // namespace

void ExperimentConfig::validate() const {
    if (data.source != "synthetic" && data.source != "csv") {
        throw ConfigError("config: data.source must be synthetic or csv");
    }
    if (data.source == "csv" && data.csv_path.empty()) {
        throw ConfigError("config: data.csv_path required for csv source");
    }
    if (data.source == "csv" && data.label_column.empty()) {
        throw ConfigError("config: data.label_column required for csv source");
    }
    if (data.n_classes < 2) throw ConfigError("config: data.n_classes must be >= 2");
    if (vfl.n_participants < 2) throw ConfigError("config: vfl.n_participants must be >= 2");
    if (vfl.embedding_dim < 1) throw ConfigError("config: vfl.embedding_dim must be >= 1");
    if (vfl.epochs < 1) throw ConfigError("config: vfl.epochs must be >= 1");
    if (!(vfl.learning_rate > 0.0)) throw ConfigError("config: vfl.learning_rate must be > 0");
    if (vfl.batch_size < 1) throw ConfigError("config: vfl.batch_size must be >= 1");
    if (attack.kind != "none" && attack.kind != "badvfl" && attack.kind != "villain") {
        throw ConfigError("config: attack.kind must be none, badvfl or villain");
    }
    if (has_attack()) attack_plan().validate(vfl.n_participants, vfl.epochs);
    if (defense.mode != "none" && defense.mode != "vflip" && defense.mode != "bdt") {
        throw ConfigError("config: defense.mode must be none, vflip or bdt");
    }
    if (defense.purify_mode != "reconstruct_all" &&
        defense.purify_mode != "replace_flagged_only") {
        throw ConfigError("config: defense.purify_mode must be reconstruct_all or "
                          "replace_flagged_only");
    }
    if (defense.rho < 0.0) throw ConfigError("config: defense.rho must be >= 0");
    if (defense.dropout < 0.0 || defense.dropout >= 1.0) {
        throw ConfigError("config: defense.dropout must be in [0,1)");
    }
    if (defense.bdt_noise_std < 0.0) throw ConfigError("config: defense.bdt_noise_std must be >= 0");
    if (eval.seeds.empty()) throw ConfigError("config: eval.seeds must not be empty");
}

AttackKind ExperimentConfig::attack_kind() const {
    if (attack.kind == "badvfl") return AttackKind::badvfl;
    if (attack.kind == "villain") return AttackKind::villain;
    throw ConfigError("config: no attack configured");
}

DefenseMode ExperimentConfig::defense_mode() const {
    if (defense.mode == "vflip") return DefenseMode::vflip;
    if (defense.mode == "bdt") return DefenseMode::bdt;
    return DefenseMode::none;
}

PurifyMode ExperimentConfig::purify_mode() const {
    return defense.purify_mode == "replace_flagged_only" ? PurifyMode::replace_flagged_only
                                                         : PurifyMode::reconstruct_all;
}

AttackPlan ExperimentConfig::attack_plan() const {
    AttackPlan plan;
    plan.attacker_indices = attack.attacker_indices;
    plan.target_label = attack.target_label;
    plan.budget = attack.budget;
    plan.e_bkd = attack.e_bkd;
    plan.label_knowledge = attack.label_knowledge;
    plan.lr_amplify = attack.lr_amplify;
    plan.kind = attack_kind();
    plan.adaptive_eta = attack.eta;
    plan.gamma = attack.gamma;
    plan.m_fraction = attack.m_fraction;
    plan.aug_drop_prob = attack.aug_drop_prob;
    plan.lambda_low = attack.lambda_low;
    plan.lambda_high = attack.lambda_high;
    plan.trigger_window = attack.trigger_window;
    plan.trigger_value = attack.trigger_value;
    return plan;
}

std::string ExperimentConfig::canonical() const {
    std::vector<std::string> lines = {
        "attack.attacker_indices=" + fmt_list(attack.attacker_indices),
        "attack.aug_drop_prob=" + fmt_double(attack.aug_drop_prob),
        "attack.budget=" + fmt_double(attack.budget),
        "attack.e_bkd=" + std::to_string(attack.e_bkd),
        "attack.eta=" + fmt_double(attack.eta),
        "attack.gamma=" + fmt_double(attack.gamma),
        "attack.kind=" + attack.kind,
        std::string("attack.label_knowledge=") + (attack.label_knowledge ? "true" : "false"),
        "attack.lambda_high=" + fmt_double(attack.lambda_high),
        "attack.lambda_low=" + fmt_double(attack.lambda_low),
        "attack.lr_amplify=" + fmt_double(attack.lr_amplify),
        "attack.m_fraction=" + fmt_double(attack.m_fraction),
        "attack.target_label=" + std::to_string(attack.target_label),
        "attack.trigger_value=" + fmt_double(attack.trigger_value),
        "attack.trigger_window=" + std::to_string(attack.trigger_window),
        "data.csv_path=" + data.csv_path,
        "data.dim=" + std::to_string(data.dim),
        "data.k_aux=" + std::to_string(data.k_aux),
        "data.k_test=" + std::to_string(data.k_test),
        "data.k_train=" + std::to_string(data.k_train),
        "data.label_column=" + data.label_column,
        "data.n_classes=" + std::to_string(data.n_classes),
        "data.noise_std=" + fmt_double(data.noise_std),
        "data.separation=" + fmt_double(data.separation),
        "data.source=" + data.source,
        "defense.bdt_noise_std=" + fmt_double(defense.bdt_noise_std),
        "defense.dropout=" + fmt_double(defense.dropout),
        "defense.lr_11=" + fmt_double(defense.lr_11),
        "defense.lr_n1=" + fmt_double(defense.lr_n1),
        "defense.mae_batch=" + std::to_string(defense.mae_batch),
        "defense.mae_epochs=" + std::to_string(defense.mae_epochs),
        "defense.mae_hidden=" + std::to_string(defense.mae_hidden),
        "defense.mae_latent=" + std::to_string(defense.mae_latent),
        "defense.mode=" + defense.mode,
        "defense.purify_mode=" + defense.purify_mode,
        "defense.rho=" + fmt_double(defense.rho),
        "vfl.batch_size=" + std::to_string(vfl.batch_size),
        "vfl.bottom_hidden=" + fmt_list(vfl.bottom_hidden),
        "vfl.embedding_dim=" + std::to_string(vfl.embedding_dim),
        "vfl.epochs=" + std::to_string(vfl.epochs),
        "vfl.learning_rate=" + fmt_double(vfl.learning_rate),
        "vfl.n_participants=" + std::to_string(vfl.n_participants),
        "vfl.top_hidden=" + fmt_list(vfl.top_hidden),
    };
    std::sort(lines.begin(), lines.end());
    std::string out;
    for (const std::string& l : lines) {
        out += l;
        out += "\n";
    }
    return out;
}

std::string ExperimentConfig::digest() const {
    // FNV-1a 64-bit over the canonical text.
    std::uint64_t h = 14695981039346656037ULL;
    for (unsigned char c : canonical()) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

ExperimentConfig parse_config_text(const std::string& text) {
    ExperimentConfig cfg;
    std::stringstream ss(text);
    std::string line, section;
    std::size_t line_no = 0;
    while (std::getline(ss, line)) {
        ++line_no;
        auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']') {
                throw ConfigError("config: malformed section header at line " +
                                  std::to_string(line_no));
            }
            section = trim(line.substr(1, line.size() - 2));
            continue;
        }
        auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("config: expected key=value at line " + std::to_string(line_no));
        }
        if (section.empty()) {
            throw ConfigError("config: key outside any section at line " + std::to_string(line_no));
        }
        set_key(cfg, section, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    return cfg;
}

ExperimentConfig parse_config_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("config: cannot open '" + path + "'");
    std::stringstream buf;
    buf << is.rdbuf();
    return parse_config_text(buf.str());
}

void apply_override(ExperimentConfig& cfg, const std::string& assignment) {
    auto eq = assignment.find('=');
    auto dot = assignment.find('.');
    if (eq == std::string::npos || dot == std::string::npos || dot > eq) {
        throw ConfigError("config: override must look like section.key=value, got '" +
                          assignment + "'");
    }
    set_key(cfg, trim(assignment.substr(0, dot)),
            trim(assignment.substr(dot + 1, eq - dot - 1)), trim(assignment.substr(eq + 1)));
}

void save_config(const ExperimentConfig& cfg, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot write config to '" + path + "'");
    std::string section;
    std::stringstream ss(cfg.canonical());
    std::string line;
    while (std::getline(ss, line)) {
        auto dot = line.find('.');
        std::string sec = line.substr(0, dot);
        if (sec != section) {
            if (!section.empty()) os << "\n";
            os << "[" << sec << "]\n";
            section = sec;
        }
        os << line.substr(dot + 1) << "\n";
    }
}

} // namespace vfl
