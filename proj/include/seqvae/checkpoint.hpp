#pragma once

#include <string>

#include <json.hpp>

#include "seqvae/vae.hpp"

namespace seqvae {

// Checkpoint container: 8-byte magic "SVAECKP1", a little-endian uint32 JSON
// header length, the JSON header {format_version, config, tensors: [{name,
// shape, offset, count}]}, then a raw little-endian float32 payload. Offsets
// are bytes from the payload start. Loading validates every shape against
// the configuration.
inline constexpr char kCheckpointMagic[8] = {'S', 'V', 'A', 'E', 'C', 'K', 'P', '1'};

nlohmann::json vae_config_to_json(const VaeConfig& cfg);
VaeConfig vae_config_from_json(const nlohmann::json& j);

void save_checkpoint(const std::string& path, const VaeModel& model);
VaeModel load_checkpoint(const std::string& path);

}  // namespace seqvae
