#include "seqvae/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <vector>

namespace seqvae {

namespace {

void put_u32_le(std::string& out, uint32_t v) {
    out.push_back(static_cast<char>(v & 0xff));
    out.push_back(static_cast<char>((v >> 8) & 0xff));
    out.push_back(static_cast<char>((v >> 16) & 0xff));
    out.push_back(static_cast<char>((v >> 24) & 0xff));
}

uint32_t get_u32_le(const unsigned char* p) {
    return static_cast<uint32_t>(p[0]) | static_cast<uint32_t>(p[1]) << 8 |
           static_cast<uint32_t>(p[2]) << 16 | static_cast<uint32_t>(p[3]) << 24;
}

void put_f32_le(std::string& out, float f) {
    uint32_t bits;
    std::memcpy(&bits, &f, 4);
    put_u32_le(out, bits);
}

float get_f32_le(const unsigned char* p) {
    uint32_t bits = get_u32_le(p);
    float f;
    std::memcpy(&f, &bits, 4);
    return f;
}

}  // namespace

nlohmann::json vae_config_to_json(const VaeConfig& cfg) {
    return nlohmann::json{{"vocab_size", cfg.vocab_size},
                          {"embed_dim", cfg.embed_dim},
                          {"hidden_dim", cfg.hidden_dim},
                          {"latent_dim", cfg.latent_dim},
                          {"aggregation", std::string(to_string(cfg.aggregation))},
                          {"lambda_cos", cfg.lambda_cos},
                          {"word_dropout", cfg.word_dropout}};
}

VaeConfig vae_config_from_json(const nlohmann::json& j) {
    VaeConfig cfg;
    cfg.vocab_size = j.at("vocab_size").get<int>();
    cfg.embed_dim = j.at("embed_dim").get<int>();
    cfg.hidden_dim = j.at("hidden_dim").get<int>();
    cfg.latent_dim = j.at("latent_dim").get<int>();
    cfg.aggregation = aggregation_from_string(j.at("aggregation").get<std::string>());
    cfg.lambda_cos = j.at("lambda_cos").get<double>();
    cfg.word_dropout = j.at("word_dropout").get<double>();
    return cfg;
}

void save_checkpoint(const std::string& path, const VaeModel& model) {
    nlohmann::json header;
    header["format_version"] = 1;
    header["config"] = vae_config_to_json(model.cfg);
    nlohmann::json tensors = nlohmann::json::array();
    std::string payload;
    int64_t offset = 0;
    for (auto& [name, t] : model.named_parameters()) {
        nlohmann::json entry;
        entry["name"] = name;
        entry["shape"] = t.shape();
        entry["offset"] = offset;
        entry["count"] = t.numel();
        tensors.push_back(entry);
        for (double v : t.value()) put_f32_le(payload, static_cast<float>(v));
        offset += 4 * t.numel();
    }
    header["tensors"] = tensors;
    std::string header_str = header.dump();

    std::string blob;
    blob.append(kCheckpointMagic, 8);
    put_u32_le(blob, static_cast<uint32_t>(header_str.size()));
    blob += header_str;
    blob += payload;

    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw ContractError("save_checkpoint: cannot open " + path);
    os.write(blob.data(), static_cast<std::streamsize>(blob.size()));
    if (!os) throw ContractError("save_checkpoint: write failed for " + path);
}

VaeModel load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ContractError("load_checkpoint: cannot open " + path);
    std::vector<unsigned char> blob((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    if (blob.size() < 12 || std::memcmp(blob.data(), kCheckpointMagic, 8) != 0) {
        throw ContractError("load_checkpoint: " + path + " is not a checkpoint file");
    }
    uint32_t header_len = get_u32_le(blob.data() + 8);
    if (blob.size() < 12 + static_cast<size_t>(header_len)) {
        throw ContractError("load_checkpoint: truncated header in " + path);
    }
    nlohmann::json header = nlohmann::json::parse(blob.begin() + 12, blob.begin() + 12 + header_len);
    if (header.at("format_version").get<int>() != 1) {
        throw ContractError("load_checkpoint: unsupported format_version");
    }
    VaeConfig cfg = vae_config_from_json(header.at("config"));
    Rng zero_rng(0);
    VaeModel model = VaeModel::init(cfg, zero_rng);

    const unsigned char* payload = blob.data() + 12 + header_len;
    size_t payload_size = blob.size() - 12 - header_len;
    auto params = model.named_parameters();
    const auto& tensors = header.at("tensors");
    if (tensors.size() != params.size()) {
        throw ContractError("load_checkpoint: expected " + std::to_string(params.size()) + " tensors, found " +
                            std::to_string(tensors.size()));
    }
    for (size_t i = 0; i < params.size(); ++i) {
        const auto& entry = tensors[i];
        auto& [name, t] = params[i];
        if (entry.at("name").get<std::string>() != name) {
            throw ContractError("load_checkpoint: tensor " + std::to_string(i) + " is '" +
                                entry.at("name").get<std::string>() + "', expected '" + name + "'");
        }
        Shape shape = entry.at("shape").get<Shape>();
        if (shape != t.shape()) {
            throw ContractError("load_checkpoint: tensor '" + name + "' has shape " + shape_str(shape) +
                                ", expected " + shape_str(t.shape()));
        }
        int64_t offset = entry.at("offset").get<int64_t>();
        int64_t count = entry.at("count").get<int64_t>();
        if (count != t.numel() || offset < 0 ||
            static_cast<size_t>(offset + 4 * count) > payload_size) {
            throw ContractError("load_checkpoint: tensor '" + name + "' payload out of bounds");
        }
        auto vals = t.value();
        for (int64_t k = 0; k < count; ++k) {
            vals[static_cast<size_t>(k)] = static_cast<double>(get_f32_le(payload + offset + 4 * k));
        }
    }
    return model;
}

}  // namespace seqvae
