#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "shades/evaluation.hpp"
#include "shades/inference.hpp"
#include "shades/ingest.hpp"
#include "shades/networks.hpp"
#include "shades/specular_prior.hpp"
#include "shades/trainer.hpp"

namespace shades {

/// Every tunable of the toolkit, read from one key=value file.
struct Settings {
  IngestConfig ingest;
  SpecularConfig specular;
  NetworkConfig network;
  TrainConfig train;
  InferenceConfig inference;
  SsmConfig ssm;

  /// Throws InvalidConfig on unknown keys or out-of-range values.
  static Settings from_key_values(const KeyValueFile& kv);
  static Settings load(const std::filesystem::path& path);

  static std::vector<std::string> known_keys();
  KeyValueFile to_key_values() const;
};

/// SHA-1 of "blob <size>\0<bytes>", as git computes object ids.
std::string git_blob_hash(const std::string& bytes);

/// Hash over the given files and, recursively, the regular files under the
/// given directories: SHA-1 of the sorted "<path>\0<blob hash>\n" lines.
/// Prior-cache siblings of sequence directories are included when passed.
std::string content_hash(const std::vector<std::filesystem::path>& inputs);

struct RunManifest {
  std::string subcommand;
  KeyValueFile config;
  std::string input_hash;
  std::string timestamp;  // UTC, ISO 8601

  static std::string now_utc();
  std::string to_json() const;
  void write(const std::filesystem::path& path) const;
};

}  // namespace shades
