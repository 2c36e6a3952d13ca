#include "eitphys/cli/config.hpp"

#include <fstream>
#include <sstream>

namespace eitphys::cli {

namespace {

std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

}  // namespace

KvConfig KvConfig::parse_string(const std::string& text, const std::string& origin) {
    KvConfig cfg;
    std::istringstream in(text);
    std::string line, section;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']') {
                throw ConfigError(origin + ":" + std::to_string(lineno) +
                                  ": malformed section header: " + line);
            }
            section = trim(line.substr(1, line.size() - 2));
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError(origin + ":" + std::to_string(lineno) +
                              ": expected key = value, got: " + line);
        }
        std::string key = trim(line.substr(0, eq));
        std::string value = trim(line.substr(eq + 1));
        if (value.size() >= 2 && value.front() == '"' && value.back() == '"') {
            value = value.substr(1, value.size() - 2);
        }
        if (key.empty()) {
            throw ConfigError(origin + ":" + std::to_string(lineno) + ": empty key");
        }
        cfg.values[(section.empty() ? key : section + "." + key)] = value;
    }
    return cfg;
}

KvConfig KvConfig::parse_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open config file " + path);
    std::stringstream buf;
    buf << f.rdbuf();
    return parse_string(buf.str(), path);
}

std::string KvConfig::get_str(const std::string& key, const std::string& fallback) const {
    auto it = values.find(key);
    return it == values.end() ? fallback : it->second;
}

double KvConfig::get_double(const std::string& key, double fallback) const {
    auto it = values.find(key);
    if (it == values.end()) return fallback;
    try {
        size_t used = 0;
        const double v = std::stod(it->second, &used);
        if (used != it->second.size()) throw std::invalid_argument("trailing");
        return v;
    } catch (const std::exception&) {
        throw ConfigError("config field " + key + ": expected a number, got '" + it->second + "'");
    }
}

int64_t KvConfig::get_int(const std::string& key, int64_t fallback) const {
    auto it = values.find(key);
    if (it == values.end()) return fallback;
    try {
        size_t used = 0;
        const long long v = std::stoll(it->second, &used);
        if (used != it->second.size()) throw std::invalid_argument("trailing");
        return v;
    } catch (const std::exception&) {
        throw ConfigError("config field " + key + ": expected an integer, got '" + it->second +
                          "'");
    }
}

bool KvConfig::get_bool(const std::string& key, bool fallback) const {
    auto it = values.find(key);
    if (it == values.end()) return fallback;
    if (it->second == "true" || it->second == "1") return true;
    if (it->second == "false" || it->second == "0") return false;
    throw ConfigError("config field " + key + ": expected true/false, got '" + it->second + "'");
}

const char* split_name(phantom::SplitScheme s) {
    return s == phantom::SplitScheme::IntraPatient ? "intra" : "inter";
}

phantom::SplitScheme split_from_name(const std::string& name) {
    if (name == "intra" || name == "intra_patient") return phantom::SplitScheme::IntraPatient;
    if (name == "inter" || name == "inter_patient") return phantom::SplitScheme::InterPatient;
    throw ConfigError("unknown split scheme: " + name + " (expected intra|inter)");
}

ExperimentConfig ExperimentConfig::from_kv(const KvConfig& kv) {
    ExperimentConfig cfg;
    cfg.phantom.patients = static_cast<int>(kv.get_int("phantom.patients", cfg.phantom.patients));
    cfg.phantom.records_per_patient =
        static_cast<int>(kv.get_int("phantom.records", cfg.phantom.records_per_patient));
    cfg.phantom.duration_s = kv.get_double("phantom.duration_s", cfg.phantom.duration_s);
    cfg.phantom.seed = static_cast<uint64_t>(kv.get_int("phantom.seed",
                                                        static_cast<int64_t>(cfg.phantom.seed)));
    cfg.phantom.max_injected_lag =
        static_cast<int>(kv.get_int("phantom.max_injected_lag", cfg.phantom.max_injected_lag));
    cfg.phantom.render.noise_sigma =
        kv.get_double("phantom.noise_sigma", cfg.phantom.render.noise_sigma);
    cfg.phantom.render.cardiac_gain =
        kv.get_double("phantom.cardiac_gain", cfg.phantom.render.cardiac_gain);

    cfg.split = split_from_name(kv.get_str("split.scheme", split_name(cfg.split)));

    cfg.train.task = training::task_from_name(
        kv.get_str("task.task", training::task_name(cfg.train.task)));
    const auto variant = kv.get_int("task.variant", static_cast<int64_t>(cfg.train.variant));
    if (variant < 1 || variant > 3) throw ConfigError("config field task.variant: expected 1..3");
    cfg.train.variant = static_cast<nets::Variant>(variant);
    cfg.variant_all = kv.get_bool("task.all_variants", cfg.variant_all);

    cfg.model.groups = static_cast<int>(kv.get_int("model.groups", cfg.model.groups));
    cfg.model.layers_per_group =
        static_cast<int>(kv.get_int("model.layers_per_group", cfg.model.layers_per_group));
    cfg.model.initial_features =
        static_cast<int>(kv.get_int("model.initial_features", cfg.model.initial_features));
    cfg.model.intermed_dim =
        static_cast<int>(kv.get_int("model.intermed_dim", cfg.model.intermed_dim));
    cfg.model.lstm_hidden = static_cast<int>(kv.get_int("model.lstm_hidden", cfg.model.lstm_hidden));
    cfg.model.aux_hidden = static_cast<int>(kv.get_int("model.aux_hidden", cfg.model.aux_hidden));

    cfg.train.max_lr = kv.get_double("train.max_lr", cfg.train.max_lr);
    cfg.train.epochs = static_cast<int>(kv.get_int("train.epochs", cfg.train.epochs));
    cfg.train.batch_size = static_cast<int>(kv.get_int("train.batch_size", cfg.train.batch_size));
    cfg.train.weight_decay = kv.get_double("train.weight_decay", cfg.train.weight_decay);
    cfg.train.pct_start = kv.get_double("train.pct_start", cfg.train.pct_start);
    cfg.train.grad_clip = kv.get_double("train.grad_clip", cfg.train.grad_clip);
    cfg.train.seed =
        static_cast<uint64_t>(kv.get_int("train.seed", static_cast<int64_t>(cfg.train.seed)));
    cfg.train.crops_per_record =
        static_cast<int>(kv.get_int("train.crops_per_record", cfg.train.crops_per_record));

    cfg.data_dir = kv.get_str("out.data_dir", cfg.data_dir);
    cfg.out_dir = kv.get_str("out.dir", cfg.out_dir);

    for (const auto& [key, value] : kv.values) {
        static const char* known[] = {
            "phantom.patients",    "phantom.records",        "phantom.duration_s",
            "phantom.seed",        "phantom.max_injected_lag", "phantom.noise_sigma",
            "phantom.cardiac_gain", "split.scheme",           "task.task",
            "task.variant",        "task.all_variants",      "model.groups",
            "model.layers_per_group", "model.initial_features", "model.intermed_dim",
            "model.lstm_hidden",   "model.aux_hidden",       "train.max_lr",
            "train.epochs",        "train.batch_size",       "train.weight_decay",
            "train.pct_start",     "train.grad_clip",        "train.seed",
            "train.crops_per_record", "out.data_dir",        "out.dir"};
        bool ok = false;
        for (const char* k : known) ok = ok || key == k;
        if (!ok) throw ConfigError("unknown config field: " + key);
    }
    return cfg;
}

ExperimentConfig ExperimentConfig::from_file(const std::string& path) {
    return from_kv(KvConfig::parse_file(path));
}

std::string ExperimentConfig::to_text() const {
    std::ostringstream os;
    os << "[phantom]\n"
       << "patients = " << phantom.patients << "\n"
       << "records = " << phantom.records_per_patient << "\n"
       << "duration_s = " << phantom.duration_s << "\n"
       << "seed = " << phantom.seed << "\n"
       << "max_injected_lag = " << phantom.max_injected_lag << "\n"
       << "noise_sigma = " << phantom.render.noise_sigma << "\n"
       << "cardiac_gain = " << phantom.render.cardiac_gain << "\n\n"
       << "[split]\n"
       << "scheme = " << split_name(split) << "\n\n"
       << "[task]\n"
       << "task = " << training::task_name(train.task) << "\n"
       << "variant = " << static_cast<int>(train.variant) << "\n"
       << "all_variants = " << (variant_all ? "true" : "false") << "\n\n"
       << "[model]\n"
       << "groups = " << model.groups << "\n"
       << "layers_per_group = " << model.layers_per_group << "\n"
       << "initial_features = " << model.initial_features << "\n"
       << "intermed_dim = " << model.intermed_dim << "\n"
       << "lstm_hidden = " << model.lstm_hidden << "\n"
       << "aux_hidden = " << model.aux_hidden << "\n\n"
       << "[train]\n"
       << "max_lr = " << train.max_lr << "\n"
       << "epochs = " << train.epochs << "\n"
       << "batch_size = " << train.batch_size << "\n"
       << "weight_decay = " << train.weight_decay << "\n"
       << "pct_start = " << train.pct_start << "\n"
       << "grad_clip = " << train.grad_clip << "\n"
       << "seed = " << train.seed << "\n"
       << "crops_per_record = " << train.crops_per_record << "\n\n"
       << "[out]\n"
       << "data_dir = " << data_dir << "\n"
       << "dir = " << out_dir << "\n";
    return os.str();
}

}  // namespace eitphys::cli
