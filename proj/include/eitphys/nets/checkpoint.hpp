#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "eitphys/nets/model.hpp"

namespace eitphys::nets {

nlohmann::json config_to_json(const ModelConfig& cfg);
ModelConfig config_from_json(const nlohmann::json& j);

// Checkpoint file: 8-byte magic, little-endian u64 header length, JSON header
// (format version, model config, tensor directory with shapes and byte
// offsets, free-form meta), then the raw float32 payload in declaration
// order. Raw bytes round-trip, so save/load reproduces forward outputs
// bit-identically.
void save_checkpoint(const std::string& path, Model<float>& model,
                     const std::vector<std::pair<std::string, std::vector<float>>>& extra,
                     const nlohmann::json& meta);

struct Checkpoint {
    ModelConfig config;
    std::shared_ptr<Model<float>> model;
    std::map<std::string, std::vector<float>> extra;
    nlohmann::json meta;
};

Checkpoint load_checkpoint(const std::string& path);

}  // namespace eitphys::nets
