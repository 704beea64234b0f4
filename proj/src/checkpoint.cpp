#include "shades/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "shades/error.hpp"
#include "shades/image_io.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace shades {
namespace {

constexpr char kMagic[8] = {'S', 'H', 'D', 'C', 'K', 'P', 'T', '1'};

std::string dtype_name(torch::ScalarType t) {
  switch (t) {
    case torch::kFloat32: return "float32";
    case torch::kFloat64: return "float64";
    default: throw Error(ErrorKind::CheckpointError, "unsupported parameter dtype");
  }
}

torch::ScalarType dtype_from_name(const std::string& name) {
  if (name == "float32") return torch::kFloat32;
  if (name == "float64") return torch::kFloat64;
  throw Error(ErrorKind::CheckpointError, "unknown dtype '" + name + "'");
}

json config_to_json(const NetworkConfig& c) {
  return {{"image_size", c.image_size}, {"levels", c.levels},         {"base_width", c.base_width},
          {"d_min", c.d_min},           {"d_max", c.d_max},           {"pose_scale", c.pose_scale},
          {"s_max", c.s_max},           {"zero_init_pose", c.zero_init_pose}};
}

NetworkConfig config_from_json(const json& j) {
  NetworkConfig c;
  c.image_size = j.at("image_size").get<int>();
  c.levels = j.at("levels").get<int>();
  c.base_width = j.at("base_width").get<int>();
  c.d_min = j.at("d_min").get<double>();
  c.d_max = j.at("d_max").get<double>();
  c.pose_scale = j.at("pose_scale").get<double>();
  c.s_max = j.at("s_max").get<double>();
  c.zero_init_pose = j.at("zero_init_pose").get<bool>();
  return c;
}

char hex_digit(unsigned v) { return "0123456789abcdef"[v & 0xf]; }

std::string to_hex(uint64_t v) {
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, v >>= 4) s[i] = hex_digit(static_cast<unsigned>(v));
  return s;
}

}  // namespace

uint64_t fnv1a64(const void* data, std::size_t size, uint64_t seed) {
  const auto* bytes = static_cast<const unsigned char*>(data);
  uint64_t h = seed;
  for (std::size_t i = 0; i < size; ++i) {
    h ^= bytes[i];
    h *= 1099511628211ull;
  }
  return h;
}

void save_checkpoint(const fs::path& path, const Networks& networks, const CheckpointInfo& info) {
  json manifest;
  manifest["format"] = 1;
  manifest["config"] = config_to_json(info.config);
  manifest["seed"] = info.seed;
  manifest["step"] = info.step;
  manifest["epoch"] = info.epoch;
  manifest["tensors"] = json::array();

  std::string payload;
  for (const auto& [name, param] : networks.named_parameters()) {
    auto t = param.detach().to(torch::kCPU).contiguous();
    const auto nbytes = static_cast<std::size_t>(t.numel()) * t.element_size();
    manifest["tensors"].push_back({{"name", name},
                                   {"dtype", dtype_name(t.scalar_type())},
                                   {"shape", t.sizes().vec()},
                                   {"offset", payload.size()},
                                   {"nbytes", nbytes},
                                   {"fnv1a", to_hex(fnv1a64(t.data_ptr(), nbytes))}});
    payload.append(static_cast<const char*>(t.data_ptr()), nbytes);
  }

  const std::string header = manifest.dump();
  std::string blob(kMagic, sizeof(kMagic));
  uint64_t length = header.size();
  for (int i = 0; i < 8; ++i) blob.push_back(static_cast<char>((length >> (8 * i)) & 0xff));
  blob += header;
  blob += payload;
  write_text_atomic(path, blob);
}

static LoadedCheckpoint load_checkpoint_impl(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::CheckpointError, "cannot open checkpoint " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  const std::string blob = buffer.str();
  if (blob.size() < 16 || std::memcmp(blob.data(), kMagic, sizeof(kMagic)) != 0) {
    throw Error(ErrorKind::CheckpointError, "not a checkpoint: " + path.string());
  }
  uint64_t length = 0;
  for (int i = 0; i < 8; ++i) length |= static_cast<uint64_t>(static_cast<unsigned char>(blob[8 + i])) << (8 * i);
  if (length > blob.size() - 16) throw Error(ErrorKind::CheckpointError, "truncated manifest");

  LoadedCheckpoint out;
  try {
    out.manifest = json::parse(blob.substr(16, length));
    out.info.config = config_from_json(out.manifest.at("config"));
    out.info.seed = out.manifest.at("seed").get<uint64_t>();
    out.info.step = out.manifest.at("step").get<int64_t>();
    out.info.epoch = out.manifest.at("epoch").get<int64_t>();
  } catch (const json::exception& e) {
    throw Error(ErrorKind::CheckpointError, std::string("bad manifest: ") + e.what());
  }

  try {
    out.networks = std::make_unique<Networks>(out.info.config, out.info.seed);
  } catch (const Error& e) {
    throw Error(ErrorKind::CheckpointError, "bad architecture config: " + e.message());
  }
  const std::size_t data_start = 16 + length;

  std::map<std::string, json> entries;
  for (const auto& entry : out.manifest.at("tensors")) entries[entry.at("name").get<std::string>()] = entry;

  if (!entries.empty()) {
    out.networks->to(dtype_from_name(entries.begin()->second.at("dtype").get<std::string>()));
  }
  torch::NoGradGuard no_grad;
  auto params = out.networks->named_parameters();
  if (params.size() != entries.size()) throw Error(ErrorKind::CheckpointError, "parameter count mismatch");
  for (auto& [name, param] : params) {
    const auto it = entries.find(name);
    if (it == entries.end()) throw Error(ErrorKind::CheckpointError, "missing tensor " + name);
    const json& e = it->second;
    const auto dtype = dtype_from_name(e.at("dtype").get<std::string>());
    const auto shape = e.at("shape").get<std::vector<int64_t>>();
    const auto offset = e.at("offset").get<std::size_t>();
    const auto nbytes = e.at("nbytes").get<std::size_t>();
    if (dtype != param.scalar_type()) throw Error(ErrorKind::CheckpointError, "mixed parameter dtypes");
    if (param.sizes().vec() != shape) throw Error(ErrorKind::CheckpointError, "shape mismatch for " + name);
    if (static_cast<std::size_t>(param.numel()) * param.element_size() != nbytes) {
      throw Error(ErrorKind::CheckpointError, "byte length mismatch for " + name);
    }
    if (data_start + offset + nbytes > blob.size()) throw Error(ErrorKind::CheckpointError, "truncated tensor " + name);
    const char* data = blob.data() + data_start + offset;
    if (to_hex(fnv1a64(data, nbytes)) != e.at("fnv1a").get<std::string>()) {
      throw Error(ErrorKind::CheckpointError, "checksum mismatch for " + name);
    }
    std::memcpy(param.data_ptr(), data, nbytes);
  }
  return out;
}

LoadedCheckpoint load_checkpoint(const fs::path& path) {
  try {
    return load_checkpoint_impl(path);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::CheckpointError, std::string("bad manifest: ") + e.what());
  }
}

}  // namespace shades
