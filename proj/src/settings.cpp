#include "shades/settings.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <sstream>

#include <json.hpp>
#include <openssl/sha.h>

#include "shades/error.hpp"
#include "shades/image_io.hpp"

namespace fs = std::filesystem;

namespace shades {

Settings Settings::from_key_values(const KeyValueFile& kv) {
  const auto unknown = kv.unknown_keys(known_keys());
  if (!unknown.empty()) throw Error(ErrorKind::InvalidConfig, "unknown config key '" + unknown.front() + "'");
  Settings s;
  s.ingest = IngestConfig::from_key_values(kv);
  s.specular = SpecularConfig::from_key_values(kv);
  s.network = NetworkConfig::from_key_values(kv, s.ingest.out_size);
  s.train = TrainConfig::from_key_values(kv);
  s.inference = InferenceConfig::from_key_values(kv);
  s.ssm = SsmConfig::from_key_values(kv);
  return s;
}

Settings Settings::load(const fs::path& path) { return from_key_values(KeyValueFile::load(path)); }

std::vector<std::string> Settings::known_keys() {
  std::vector<std::string> keys;
  const auto defaults = Settings{}.to_key_values();
  for (const auto& [key, value] : defaults.entries()) keys.push_back(key);
  return keys;
}

KeyValueFile Settings::to_key_values() const {
  KeyValueFile kv;
  ingest.write(kv);
  specular.write(kv);
  network.write(kv);
  train.write(kv);
  inference.write(kv);
  ssm.write(kv);
  return kv;
}

namespace {

std::string sha1_hex(const std::string& bytes) {
  unsigned char digest[SHA_DIGEST_LENGTH];
  SHA1(reinterpret_cast<const unsigned char*>(bytes.data()), bytes.size(), digest);
  std::string hex;
  char buf[3];
  for (unsigned char c : digest) {
    std::snprintf(buf, sizeof(buf), "%02x", c);
    hex += buf;
  }
  return hex;
}

std::string read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

std::string git_blob_hash(const std::string& bytes) {
  std::string object = "blob " + std::to_string(bytes.size());
  object.push_back('\0');
  object += bytes;
  return sha1_hex(object);
}

std::string content_hash(const std::vector<fs::path>& inputs) {
  std::vector<std::string> lines;
  auto add = [&](const fs::path& file, const std::string& label) {
    std::string line = label;
    line.push_back('\0');
    lines.push_back(line + git_blob_hash(read_bytes(file)) + "\n");
  };
  for (const auto& input : inputs) {
    if (fs::is_regular_file(input)) {
      add(input, input.filename().generic_string());
    } else if (fs::is_directory(input)) {
      for (const auto& entry : fs::recursive_directory_iterator(input)) {
        if (entry.is_regular_file()) {
          add(entry.path(), input.filename().generic_string() + "/" + fs::relative(entry.path(), input).generic_string());
        }
      }
    }
  }
  std::sort(lines.begin(), lines.end());
  std::string joined;
  for (const auto& l : lines) joined += l;
  return sha1_hex(joined);
}

std::string RunManifest::now_utc() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string RunManifest::to_json() const {
  nlohmann::json j;
  j["subcommand"] = subcommand;
  j["config"] = nlohmann::json::object();
  for (const auto& [key, value] : config.entries()) j["config"][key] = value;
  j["input_hash"] = input_hash;
  j["timestamp"] = timestamp;
  return j.dump(2) + "\n";
}

void RunManifest::write(const fs::path& path) const { write_text_atomic(path, to_json()); }

}  // namespace shades
