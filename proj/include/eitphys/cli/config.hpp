#pragma once

#include <map>
#include <string>

#include "eitphys/nets/config.hpp"
#include "eitphys/phantom/dataset.hpp"
#include "eitphys/training/loop.hpp"

namespace eitphys::cli {

// Minimal TOML-like file: [section] headers, key = value lines, # comments.
struct KvConfig {
    std::map<std::string, std::string> values;  // "section.key" -> raw value

    static KvConfig parse_string(const std::string& text, const std::string& origin = "<string>");
    static KvConfig parse_file(const std::string& path);

    bool has(const std::string& key) const { return values.count(key) > 0; }
    std::string get_str(const std::string& key, const std::string& fallback) const;
    double get_double(const std::string& key, double fallback) const;
    int64_t get_int(const std::string& key, int64_t fallback) const;
    bool get_bool(const std::string& key, bool fallback) const;
};

// One declarative file that pins a full reproducible run.
struct ExperimentConfig {
    phantom::PhantomConfig phantom;
    phantom::SplitScheme split = phantom::SplitScheme::InterPatient;
    training::TrainConfig train;
    nets::ModelConfig model;  // dimensions; output channels are set per task
    std::string data_dir = "data/phantom";
    std::string out_dir = "runs/out";
    bool variant_all = false;  // task 5: train all three variants

    static ExperimentConfig from_kv(const KvConfig& kv);
    static ExperimentConfig from_file(const std::string& path);

    // Round-trippable text with every field explicit (`config --defaults`).
    std::string to_text() const;
};

const char* split_name(phantom::SplitScheme s);
phantom::SplitScheme split_from_name(const std::string& name);

}  // namespace eitphys::cli
