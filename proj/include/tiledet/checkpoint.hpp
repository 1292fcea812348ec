#pragma once

#include <cstdint>
#include <filesystem>

#include "tiledet/model.hpp"

namespace tiledet {

struct Checkpoint {
  ModelConfig config;
  ModelParams params;
  std::uint64_t seed = 0;
};

// Layout: "TDCK" magic, u32 format version, u64 manifest length, JSON manifest
// {version, seed, config, tensors:[{name, shape, offset}]}, then the tensors as
// little-endian float32 in manifest order. Offsets are in bytes from the start
// of the payload.
inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Rounds every parameter through float32, as a save/load cycle would.
void round_to_f32(ModelParams& params);

}  // namespace tiledet
