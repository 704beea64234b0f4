#include "shades/ingest.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "shades/error.hpp"
#include "shades/image_io.hpp"
#include "shades/view_synthesis.hpp"

namespace fs = std::filesystem;

namespace shades {

void Frame::validate() const {
  if (!pixels.defined() || pixels.dim() != 3 || pixels.size(0) != 3 || pixels.size(1) < 1 || pixels.size(2) < 1) {
    throw Error(ErrorKind::InvalidInput, "frame pixels must be a non-empty [3,H,W] tensor");
  }
  if (!torch::isfinite(pixels).all().item<bool>()) throw Error(ErrorKind::InvalidInput, "frame has non-finite pixels");
  if (pixels.min().item<double>() < 0.0 || pixels.max().item<double>() > 1.0) {
    throw Error(ErrorKind::InvalidInput, "frame pixels must lie in [0,1]");
  }
}

// ---------------------------------------------------------------------------
// CameraModel

CameraModel CameraModel::from_key_values(const KeyValueFile& kv) {
  for (const char* key : {"fx", "fy", "cx", "cy"}) {
    if (!kv.contains(key)) throw Error(ErrorKind::InvalidCamera, std::string("camera file lacks '") + key + "'");
  }
  const auto unknown = kv.unknown_keys({"fx", "fy", "cx", "cy", "k1", "k2", "p1", "p2", "k3"});
  if (!unknown.empty()) throw Error(ErrorKind::InvalidCamera, "unknown camera key '" + unknown.front() + "'");
  CameraModel cam;
  cam.fx = kv.get_double("fx", 0.0);
  cam.fy = kv.get_double("fy", 0.0);
  cam.cx = kv.get_double("cx", 0.0);
  cam.cy = kv.get_double("cy", 0.0);
  cam.dist = {kv.get_double("k1", 0.0), kv.get_double("k2", 0.0), kv.get_double("p1", 0.0),
              kv.get_double("p2", 0.0), kv.get_double("k3", 0.0)};
  cam.validate();
  return cam;
}

CameraModel CameraModel::load(const fs::path& path) { return from_key_values(KeyValueFile::load(path)); }

void CameraModel::validate() const {
  const bool finite = std::isfinite(fx) && std::isfinite(fy) && std::isfinite(cx) && std::isfinite(cy) &&
                      std::all_of(dist.begin(), dist.end(), [](double d) { return std::isfinite(d); });
  if (!finite) throw Error(ErrorKind::InvalidCamera, "camera parameters must be finite");
  if (!(fx > 0.0) || !(fy > 0.0)) throw Error(ErrorKind::InvalidCamera, "singular intrinsics: fx and fy must be > 0");
}

bool CameraModel::has_distortion() const {
  return std::any_of(dist.begin(), dist.end(), [](double d) { return d != 0.0; });
}

torch::Tensor CameraModel::K(torch::ScalarType dtype) const {
  return torch::tensor({fx, 0.0, cx, 0.0, fy, cy, 0.0, 0.0, 1.0}, torch::kFloat64).reshape({3, 3}).to(dtype);
}

torch::Tensor CameraModel::K_inv(torch::ScalarType dtype) const {
  validate();
  return torch::tensor({1.0 / fx, 0.0, -cx / fx, 0.0, 1.0 / fy, -cy / fy, 0.0, 0.0, 1.0}, torch::kFloat64)
      .reshape({3, 3})
      .to(dtype);
}

CameraModel CameraModel::for_crop_resize(int64_t raw_h, int64_t raw_w, int64_t out_size) const {
  const int64_t side = std::min(raw_h, raw_w);
  const double x0 = static_cast<double>((raw_w - side) / 2);
  const double y0 = static_cast<double>((raw_h - side) / 2);
  const double scale = static_cast<double>(out_size) / static_cast<double>(side);
  CameraModel out = *this;
  out.fx = fx * scale;
  out.fy = fy * scale;
  out.cx = (cx - x0 + 0.5) * scale - 0.5;
  out.cy = (cy - y0 + 0.5) * scale - 0.5;
  return out;
}

CameraModel CameraModel::flipped_horizontally(int64_t width) const {
  CameraModel out = *this;
  out.cx = static_cast<double>(width - 1) - cx;
  out.dist[3] = -dist[3];  // p2 multiplies odd powers of x
  return out;
}

std::array<double, 2> CameraModel::distort_normalized(double x, double y) const {
  const auto [k1, k2, p1, p2, k3] = dist;
  const double r2 = x * x + y * y;
  const double radial = 1.0 + r2 * (k1 + r2 * (k2 + r2 * k3));
  return {x * radial + 2.0 * p1 * x * y + p2 * (r2 + 2.0 * x * x),
          y * radial + p1 * (r2 + 2.0 * y * y) + 2.0 * p2 * x * y};
}

std::array<double, 2> CameraModel::undistort_normalized(double xd, double yd, int iterations) const {
  const auto [k1, k2, p1, p2, k3] = dist;
  double x = xd;
  double y = yd;
  for (int i = 0; i < iterations; ++i) {
    const double r2 = x * x + y * y;
    const double radial = 1.0 + r2 * (k1 + r2 * (k2 + r2 * k3));
    const double dx = 2.0 * p1 * x * y + p2 * (r2 + 2.0 * x * x);
    const double dy = p1 * (r2 + 2.0 * y * y) + 2.0 * p2 * x * y;
    x = (xd - dx) / radial;
    y = (yd - dy) / radial;
  }
  return {x, y};
}

// ---------------------------------------------------------------------------
// Config

IngestConfig IngestConfig::from_key_values(const KeyValueFile& kv) {
  IngestConfig config;
  config.out_size = kv.get_int("out_size", config.out_size);
  config.gaps = kv.get_int_list("gaps", config.gaps);
  config.frame_cap = kv.get_int("frame_cap", config.frame_cap);
  config.validate();
  return config;
}

void IngestConfig::write(KeyValueFile& kv) const {
  kv.set("out_size", std::to_string(out_size));
  std::string joined;
  for (std::size_t i = 0; i < gaps.size(); ++i) joined += (i ? "," : "") + std::to_string(gaps[i]);
  kv.set("gaps", joined);
  kv.set("frame_cap", std::to_string(frame_cap));
}

void IngestConfig::validate() const {
  if (out_size < 8) throw Error(ErrorKind::InvalidConfig, "out_size must be >= 8");
  if (gaps.empty()) throw Error(ErrorKind::InvalidConfig, "gaps must not be empty");
  if (std::find(gaps.begin(), gaps.end(), 0) != gaps.end()) throw Error(ErrorKind::InvalidConfig, "gap 0 is not allowed");
  if (frame_cap < 0) throw Error(ErrorKind::InvalidConfig, "frame_cap must be >= 0");
}

// ---------------------------------------------------------------------------
// Operations

torch::Tensor crop_resize(const torch::Tensor& raw, int out_size) {
  if (!raw.defined() || raw.dim() != 3 || raw.size(0) != 3 || raw.numel() == 0) {
    throw Error(ErrorKind::InvalidInput, "crop_resize expects a non-empty [3,H,W] image");
  }
  if (out_size < 1) throw Error(ErrorKind::InvalidInput, "out_size must be positive");
  const auto height = raw.size(1);
  const auto width = raw.size(2);
  const auto side = std::min(height, width);
  const auto y0 = (height - side) / 2;
  const auto x0 = (width - side) / 2;
  auto square = raw.to(torch::kFloat32).slice(1, y0, y0 + side).slice(2, x0, x0 + side);
  if (side == out_size) return square.contiguous().clone();
  namespace F = torch::nn::functional;
  auto resized = F::interpolate(square.unsqueeze(0), F::InterpolateFuncOptions()
                                                         .size(std::vector<int64_t>{out_size, out_size})
                                                         .mode(torch::kBilinear)
                                                         .align_corners(false));
  return resized.squeeze(0).clamp(0.0, 1.0).contiguous();
}

torch::Tensor undistort(const torch::Tensor& image, const CameraModel& cam) {
  cam.validate();
  if (!image.defined() || image.dim() != 3) throw Error(ErrorKind::InvalidInput, "undistort expects a [C,H,W] image");
  const auto height = image.size(1);
  const auto width = image.size(2);
  auto options = torch::TensorOptions().dtype(torch::kFloat64);
  auto grid = torch::meshgrid({torch::arange(height, options), torch::arange(width, options)}, "ij");
  auto x = (grid[1] - cam.cx) / cam.fx;
  auto y = (grid[0] - cam.cy) / cam.fy;
  const auto [k1, k2, p1, p2, k3] = cam.dist;
  auto r2 = x * x + y * y;
  auto radial = 1.0 + r2 * (k1 + r2 * (k2 + r2 * k3));
  auto xd = x * radial + 2.0 * p1 * x * y + p2 * (r2 + 2.0 * x * x);
  auto yd = y * radial + p1 * (r2 + 2.0 * y * y) + 2.0 * p2 * x * y;
  auto coords = torch::stack({xd * cam.fx + cam.cx, yd * cam.fy + cam.cy}, -1).unsqueeze(0);
  auto sampled = bilinear_sample(image.to(torch::kFloat64).unsqueeze(0), coords);
  return sampled.values.squeeze(0).to(image.scalar_type());
}

Frame undistort(const Frame& frame, const CameraModel& cam) {
  return {undistort(frame.pixels, cam), frame.seq_id, frame.index};
}

std::vector<PairIndex> sample_pair_indices(int length, const std::vector<int>& gaps) {
  if (length < 2) throw Error(ErrorKind::InsufficientFrames, "need at least 2 frames, got " + std::to_string(length));
  const std::set<int> ordered(gaps.begin(), gaps.end());
  std::vector<PairIndex> pairs;
  for (int t = 0; t < length; ++t) {
    for (int g : ordered) {
      if (g == 0) continue;
      const int s = t + g;
      if (s >= 0 && s < length) pairs.push_back({t, s, g});
    }
  }
  return pairs;
}

std::vector<FramePair> sample_pairs(const std::vector<Frame>& sequence, const std::vector<int>& gaps) {
  std::vector<FramePair> pairs;
  for (const auto& p : sample_pair_indices(static_cast<int>(sequence.size()), gaps)) {
    if (sequence[p.target].seq_id != sequence[p.source].seq_id) {
      throw Error(ErrorKind::InvalidInput, "pair frames come from different sequences");
    }
    pairs.push_back({sequence[p.target], sequence[p.source], p.gap});
  }
  return pairs;
}

std::vector<SequenceSource> discover_sequences(const fs::path& data_dir, int frame_cap) {
  if (!fs::is_directory(data_dir)) throw Error(ErrorKind::Io, "data directory not found: " + data_dir.string());
  auto make = [frame_cap](const fs::path& dir) {
    SequenceSource seq{dir.filename().string(), dir, list_image_files(dir)};
    if (frame_cap > 0 && static_cast<int>(seq.files.size()) > frame_cap) seq.files.resize(frame_cap);
    return seq;
  };
  std::vector<SequenceSource> sequences;
  auto direct = make(data_dir);
  if (!direct.files.empty()) {
    sequences.push_back(std::move(direct));
    return sequences;
  }
  std::vector<fs::path> subdirs;
  for (const auto& entry : fs::directory_iterator(data_dir)) {
    if (!entry.is_directory()) continue;
    const std::string name = entry.path().filename().string();
    auto ends_with = [&name](const std::string& suffix) {
      return name.size() >= suffix.size() && name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0;
    };
    if (ends_with("_rem") || ends_with("_mask")) continue;
    subdirs.push_back(entry.path());
  }
  std::sort(subdirs.begin(), subdirs.end());
  for (const auto& dir : subdirs) {
    auto seq = make(dir);
    if (!seq.files.empty()) sequences.push_back(std::move(seq));
  }
  return sequences;
}

FrameLoader::FrameLoader(IngestConfig config, std::optional<CameraModel> raw_camera)
    : config_(std::move(config)), raw_camera_(std::move(raw_camera)) {
  config_.validate();
  if (raw_camera_) raw_camera_->validate();
}

Frame FrameLoader::load(const fs::path& path, const std::string& seq_id, int index) const {
  auto raw = load_image(path);
  Frame frame{crop_resize(raw, config_.out_size), seq_id, index};
  if (raw_camera_ && raw_camera_->has_distortion()) {
    frame.pixels = undistort(frame.pixels, processed_camera(raw.size(1), raw.size(2)));
  }
  return frame;
}

CameraModel FrameLoader::processed_camera(int64_t raw_h, int64_t raw_w) const {
  if (!raw_camera_) throw Error(ErrorKind::InvalidCamera, "no camera model configured");
  return raw_camera_->for_crop_resize(raw_h, raw_w, config_.out_size);
}

}  // namespace shades
