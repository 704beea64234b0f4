#include "shades/specular_prior.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "shades/error.hpp"
#include "shades/image_io.hpp"

namespace fs = std::filesystem;

namespace shades {

SpecularConfig SpecularConfig::from_key_values(const KeyValueFile& kv) {
  SpecularConfig c;
  c.percentile = kv.get_double("spec_percentile", c.percentile);
  c.max_saturation = kv.get_double("spec_max_saturation", c.max_saturation);
  c.dilation_radius = kv.get_int("spec_dilation_radius", c.dilation_radius);
  c.inpaint_tolerance = kv.get_double("inpaint_tolerance", c.inpaint_tolerance);
  c.inpaint_max_iterations = kv.get_int("inpaint_max_iterations", c.inpaint_max_iterations);
  c.validate();
  return c;
}

void SpecularConfig::write(KeyValueFile& kv) const {
  kv.set("spec_percentile", format_number(percentile));
  kv.set("spec_max_saturation", format_number(max_saturation));
  kv.set("spec_dilation_radius", std::to_string(dilation_radius));
  kv.set("inpaint_tolerance", format_number(inpaint_tolerance));
  kv.set("inpaint_max_iterations", std::to_string(inpaint_max_iterations));
}

void SpecularConfig::validate() const {
  if (!(percentile >= 0.0 && percentile <= 100.0)) throw Error(ErrorKind::InvalidConfig, "spec_percentile must be in [0,100]");
  if (!(max_saturation > 0.0)) throw Error(ErrorKind::InvalidConfig, "spec_max_saturation must be > 0");
  if (dilation_radius < 0) throw Error(ErrorKind::InvalidConfig, "spec_dilation_radius must be >= 0");
  if (!(inpaint_tolerance > 0.0)) throw Error(ErrorKind::InvalidConfig, "inpaint_tolerance must be > 0");
  if (inpaint_max_iterations < 1) throw Error(ErrorKind::InvalidConfig, "inpaint_max_iterations must be >= 1");
}

torch::Tensor dilate_disk(const torch::Tensor& mask, int radius) {
  if (radius <= 0) return mask.clone();
  const auto height = mask.size(0);
  const auto width = mask.size(1);
  auto padded = torch::constant_pad_nd(mask.to(torch::kFloat32), {radius, radius, radius, radius}, 0.0);
  auto out = torch::zeros({height, width}, torch::kFloat32);
  for (int dy = -radius; dy <= radius; ++dy) {
    for (int dx = -radius; dx <= radius; ++dx) {
      if (dx * dx + dy * dy > radius * radius) continue;
      out = torch::maximum(out, padded.slice(0, radius + dy, radius + dy + height).slice(1, radius + dx, radius + dx + width));
    }
  }
  return out;
}

SpecularMask segment_specular(const Frame& frame, const SpecularConfig& config) {
  frame.validate();
  auto pixels = frame.pixels.to(torch::kFloat64);
  auto min_channel = std::get<0>(pixels.min(0));
  auto max_channel = std::get<0>(pixels.max(0));
  auto threshold = torch::quantile(min_channel.reshape(-1), config.percentile / 100.0);
  auto saturation = torch::where(max_channel > 0, (max_channel - min_channel) / max_channel.clamp_min(1e-12),
                                 torch::zeros_like(max_channel));
  auto flagged = (min_channel > threshold) & (saturation < config.max_saturation);
  return {dilate_disk(flagged.to(torch::kFloat32), config.dilation_radius)};
}

InpaintedFrame inpaint(const Frame& frame, const SpecularMask& mask, const SpecularConfig& config) {
  frame.validate();
  const auto height = frame.height();
  const auto width = frame.width();
  if (!mask.mask.defined() || mask.mask.dim() != 2 || mask.mask.size(0) != height || mask.mask.size(1) != width) {
    throw Error(ErrorKind::InvalidInput, "mask shape does not match the frame");
  }
  auto flags = (mask.mask.to(torch::kFloat32) > 0.5).contiguous();
  const auto masked_count = flags.sum().item<int64_t>();
  if (masked_count == 0) return {frame.pixels.clone(), {flags.to(torch::kFloat32)}};
  if (masked_count == height * width) throw Error(ErrorKind::DegenerateMask, "mask covers the entire frame");

  auto values = frame.pixels.to(torch::kFloat64).contiguous();
  double* data = values.data_ptr<double>();
  const bool* is_masked = flags.data_ptr<bool>();
  const int64_t plane = height * width;

  std::vector<int64_t> holes;
  holes.reserve(static_cast<std::size_t>(masked_count));
  for (int64_t i = 0; i < plane; ++i) {
    if (is_masked[i]) holes.push_back(i);
  }

  auto neighbors = [&](int64_t i, auto&& visit) {
    const int64_t r = i / width;
    const int64_t c = i % width;
    if (r > 0) visit(i - width);
    if (r + 1 < height) visit(i + width);
    if (c > 0) visit(i - 1);
    if (c + 1 < width) visit(i + 1);
  };

  // Start every hole at the mean of the known pixels bordering the mask.
  for (int64_t ch = 0; ch < 3; ++ch) {
    double sum = 0.0;
    int64_t count = 0;
    for (int64_t i = 0; i < plane; ++i) {
      if (is_masked[i]) continue;
      bool borders = false;
      neighbors(i, [&](int64_t j) { borders = borders || is_masked[j]; });
      if (borders) {
        sum += data[ch * plane + i];
        ++count;
      }
    }
    const double init = sum / static_cast<double>(count);
    for (int64_t i : holes) data[ch * plane + i] = init;
  }

  for (int iter = 0; iter < config.inpaint_max_iterations; ++iter) {
    double max_change = 0.0;
    for (int64_t i : holes) {
      for (int64_t ch = 0; ch < 3; ++ch) {
        double* channel = data + ch * plane;
        double sum = 0.0;
        int n = 0;
        neighbors(i, [&](int64_t j) {
          sum += channel[j];
          ++n;
        });
        const double next = sum / n;
        max_change = std::max(max_change, std::abs(next - channel[i]));
        channel[i] = next;
      }
    }
    if (max_change < config.inpaint_tolerance) break;
  }

  auto filled = values.to(frame.pixels.scalar_type());
  auto keep = flags.unsqueeze(0).expand_as(filled);
  return {torch::where(keep, filled, frame.pixels), {flags.to(torch::kFloat32)}};
}

std::pair<InpaintedFrame, SpecularMask> compute_i_rem(const Frame& frame, const SpecularConfig& config) {
  auto mask = segment_specular(frame, config);
  auto filled = inpaint(frame, mask, config);
  return {std::move(filled), std::move(mask)};
}

PriorCache::PriorCache(const fs::path& sequence_dir, SpecularConfig config) : config_(config) {
  auto dir = sequence_dir.lexically_normal();
  if (dir.filename().empty()) dir = dir.parent_path();
  rem_dir_ = dir.parent_path() / (dir.filename().string() + "_rem");
  mask_dir_ = dir.parent_path() / (dir.filename().string() + "_mask");
}

std::optional<Prior> PriorCache::lookup(const std::string& stem, int64_t height, int64_t width) const {
  const auto rem_path = rem_dir_ / (stem + ".png");
  const auto mask_path = mask_dir_ / (stem + ".png");
  if (!fs::exists(rem_path) || !fs::exists(mask_path)) return std::nullopt;
  auto rem = load_image(rem_path);
  auto mask = load_image(mask_path).select(0, 0).round();
  if (rem.size(1) != height || rem.size(2) != width || mask.size(0) != height || mask.size(1) != width) {
    return std::nullopt;
  }
  return Prior{rem, mask};
}

Prior PriorCache::get_or_compute(const Frame& frame, const std::string& stem) const {
  if (auto hit = lookup(stem, frame.height(), frame.width())) return *hit;
  auto [filled, mask] = compute_i_rem(frame, config_);
  save_png16(rem_dir_ / (stem + ".png"), filled.pixels);
  save_png8(mask_dir_ / (stem + ".png"), mask.mask);
  auto stored = lookup(stem, frame.height(), frame.width());
  if (!stored) throw Error(ErrorKind::Io, "prior cache write failed for " + stem);
  return *stored;
}

int precompute_priors(const fs::path& data_dir, const FrameLoader& loader, const SpecularConfig& config) {
  const auto sequences = discover_sequences(data_dir, loader.config().frame_cap);
  if (sequences.empty()) throw Error(ErrorKind::InsufficientFrames, "no frames found under " + data_dir.string());
  const int size = loader.config().out_size;
  int computed = 0;
  for (const auto& seq : sequences) {
    PriorCache cache(seq.dir, config);
    for (int i = 0; i < static_cast<int>(seq.files.size()); ++i) {
      const auto stem = seq.files[i].stem().string();
      if (cache.lookup(stem, size, size)) continue;
      cache.get_or_compute(loader.load(seq.files[i], seq.seq_id, i), stem);
      ++computed;
    }
  }
  return computed;
}

}  // namespace shades
