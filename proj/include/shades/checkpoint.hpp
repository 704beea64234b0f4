#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>

#include <json.hpp>

#include "shades/networks.hpp"

namespace shades {

/// Single-file archive: 8-byte magic, little-endian u64 manifest length, JSON
/// manifest, then the raw parameter bytes. The manifest lists every tensor
/// (name, dtype, shape, offset, byte length, FNV-1a checksum) together with the
/// architecture config, seed and step count.
struct CheckpointInfo {
  NetworkConfig config;
  uint64_t seed = 0;
  int64_t step = 0;
  int64_t epoch = 0;
};

void save_checkpoint(const std::filesystem::path& path, const Networks& networks, const CheckpointInfo& info);

struct LoadedCheckpoint {
  CheckpointInfo info;
  std::unique_ptr<Networks> networks;
  nlohmann::json manifest;
};

/// Throws CheckpointError on a missing, truncated or corrupted file.
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

uint64_t fnv1a64(const void* data, std::size_t size, uint64_t seed = 14695981039346656037ull);

}  // namespace shades
