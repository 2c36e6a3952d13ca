#include "eitphys/nets/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace eitphys::nets {

using nlohmann::json;

namespace {
constexpr char kMagic[8] = {'E', 'I', 'T', 'C', 'K', 'P', 'T', '1'};
}

json config_to_json(const ModelConfig& cfg) {
    json j;
    j["groups"] = cfg.groups;
    j["layers_per_group"] = cfg.layers_per_group;
    j["initial_features"] = cfg.initial_features;
    j["intermed_dim"] = cfg.intermed_dim;
    j["lstm_hidden"] = cfg.lstm_hidden;
    j["aux_hidden"] = cfg.aux_hidden;
    j["image_size"] = cfg.image_size;
    j["variant"] = static_cast<int>(cfg.variant);
    json chans = json::array();
    for (ChannelId id : cfg.output_channels) chans.push_back(channel_name(id));
    j["output_channels"] = chans;
    return j;
}

ModelConfig config_from_json(const json& j) {
    ModelConfig cfg;
    cfg.groups = j.at("groups");
    cfg.layers_per_group = j.at("layers_per_group");
    cfg.initial_features = j.at("initial_features");
    cfg.intermed_dim = j.at("intermed_dim");
    cfg.lstm_hidden = j.at("lstm_hidden");
    cfg.aux_hidden = j.at("aux_hidden");
    cfg.image_size = j.at("image_size");
    cfg.variant = static_cast<Variant>(j.at("variant").get<int>());
    cfg.output_channels.clear();
    for (const auto& name : j.at("output_channels")) {
        cfg.output_channels.push_back(channel_from_name(name));
    }
    return cfg;
}

void save_checkpoint(const std::string& path, Model<float>& model,
                     const std::vector<std::pair<std::string, std::vector<float>>>& extra,
                     const json& meta) {
    json header;
    header["format_version"] = 1;
    header["config"] = config_to_json(model.config());
    header["meta"] = meta;

    json entries = json::array();
    uint64_t offset = 0;  // byte offset into the payload
    std::vector<const float*> srcs;
    std::vector<uint64_t> counts;
    auto push = [&](const std::string& name, const char* kind, const float* data, uint64_t count,
                    const std::vector<int64_t>* shape) {
        json e;
        e["name"] = name;
        e["kind"] = kind;
        e["byte_offset"] = offset;
        e["count"] = count;
        if (shape) e["shape"] = *shape;
        entries.push_back(e);
        srcs.push_back(data);
        counts.push_back(count);
        offset += count * sizeof(float);
    };
    for (auto& [name, p] : model.parameters()) {
        push(name, "param", p->value.data(), static_cast<uint64_t>(p->numel()), &p->shape);
    }
    for (auto& [name, buf] : model.buffers()) {
        push(name, "buffer", buf->data(), buf->size(), nullptr);
    }
    for (const auto& [name, buf] : extra) {
        push(name, "extra", buf.data(), buf.size(), nullptr);
    }
    header["tensors"] = entries;

    const std::string hs = header.dump();
    std::ofstream f(path, std::ios::binary);
    if (!f) throw UsageError("cannot write checkpoint " + path);
    f.write(kMagic, sizeof(kMagic));
    const uint64_t hlen = hs.size();
    f.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
    f.write(hs.data(), static_cast<std::streamsize>(hs.size()));
    for (size_t i = 0; i < srcs.size(); ++i) {
        f.write(reinterpret_cast<const char*>(srcs[i]),
                static_cast<std::streamsize>(counts[i] * sizeof(float)));
    }
    if (!f) throw UsageError("short write on checkpoint " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw UsageError("cannot read checkpoint " + path);
    char magic[8];
    f.read(magic, sizeof(magic));
    if (!f || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
        throw UsageError("not a checkpoint file: " + path);
    }
    uint64_t hlen = 0;
    f.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
    std::string hs(hlen, '\0');
    f.read(hs.data(), static_cast<std::streamsize>(hlen));
    const json header = json::parse(hs);
    if (header.at("format_version").get<int>() != 1) {
        throw UsageError("unsupported checkpoint format version in " + path);
    }

    Checkpoint out;
    out.config = config_from_json(header.at("config"));
    out.meta = header.value("meta", json::object());
    out.model = std::make_shared<Model<float>>(out.config, 0);

    std::map<std::string, float*> param_dst;
    std::map<std::string, uint64_t> param_count;
    for (auto& [name, p] : out.model->parameters()) {
        param_dst[name] = p->value.data();
        param_count[name] = static_cast<uint64_t>(p->numel());
    }
    for (auto& [name, buf] : out.model->buffers()) {
        param_dst[name] = buf->data();
        param_count[name] = buf->size();
    }

    const std::streampos payload0 = f.tellg();
    for (const auto& e : header.at("tensors")) {
        const std::string name = e.at("name");
        const std::string kind = e.at("kind");
        const uint64_t count = e.at("count");
        const uint64_t off = e.at("byte_offset");
        f.seekg(payload0 + static_cast<std::streamoff>(off));
        if (kind == "extra") {
            auto& dst = out.extra[name];
            dst.resize(count);
            f.read(reinterpret_cast<char*>(dst.data()),
                   static_cast<std::streamsize>(count * sizeof(float)));
        } else {
            auto it = param_dst.find(name);
            if (it == param_dst.end()) {
                throw UsageError("checkpoint tensor " + name + " unknown to this model config");
            }
            if (param_count[name] != count) {
                throw UsageError("checkpoint tensor " + name + " has wrong element count");
            }
            f.read(reinterpret_cast<char*>(it->second),
                   static_cast<std::streamsize>(count * sizeof(float)));
        }
        if (!f) throw UsageError("truncated checkpoint " + path);
    }
    return out;
}

}  // namespace eitphys::nets
