#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "cloudattn/network.h"
#include "cloudattn/params.h"

namespace cloudattn {

// Layout (little-endian):
//   "PCCK", u32 version, u32 config_len, config_len bytes of key=value text,
//   u32 tensor_count, then per tensor: u32 name_len, name bytes, u32 rank, rank x u32 dims,
//   prod(dims) x f32 values.
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  ModelConfig config;
  ParamStore params;
};

std::vector<std::uint8_t> serialize_checkpoint(const ModelConfig& cfg, const ParamStore& params);
Checkpoint deserialize_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const std::string& path, const ModelConfig& cfg, const ParamStore& params);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace cloudattn
