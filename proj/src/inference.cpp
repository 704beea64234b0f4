#include "shades/inference.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include <json.hpp>
#include <opencv2/imgproc.hpp>

#include "shades/error.hpp"
#include "shades/image_io.hpp"

namespace fs = std::filesystem;

namespace shades {

InferenceConfig InferenceConfig::from_key_values(const KeyValueFile& kv) {
  InferenceConfig c;
  c.mask_threshold = kv.get_double("mask_threshold", c.mask_threshold);
  c.validate();
  return c;
}

void InferenceConfig::write(KeyValueFile& kv) const { kv.set("mask_threshold", format_number(mask_threshold)); }

void InferenceConfig::validate() const {
  if (!(mask_threshold >= 0.0 && mask_threshold <= 255.0)) {
    throw Error(ErrorKind::InvalidConfig, "mask_threshold must be in [0,255]");
  }
}

torch::Tensor derive_spec_mask(const torch::Tensor& frame, const torch::Tensor& recon_as, double threshold) {
  if (!frame.defined() || !recon_as.defined() || frame.sizes() != recon_as.sizes() || frame.dim() != 3) {
    throw Error(ErrorKind::InvalidInput, "derive_spec_mask: frame and recon must both be [C,H,W]");
  }
  auto residual = frame.to(torch::kFloat64) - recon_as.to(torch::kFloat64);
  auto peak = std::get<0>(residual.max(0));
  return (peak > threshold / 255.0).to(torch::kFloat32);
}

InferenceResult infer(const Networks& networks, const Frame& frame, const std::optional<Frame>& second_frame,
                      const InferenceConfig& config) {
  frame.validate();
  torch::NoGradGuard no_grad;
  const auto dtype = networks.parameters().front().scalar_type();
  auto image = frame.pixels.unsqueeze(0).to(dtype);
  networks.check_input(image);
  auto& mutable_nets = const_cast<Networks&>(networks);
  mutable_nets.train(false);

  InferenceResult result;
  const auto& cfg = networks.config;
  result.depth = disp_to_depth(mutable_nets.depth->forward(image), cfg.d_min, cfg.d_max).squeeze(0).to(torch::kFloat32);
  auto dec = mutable_nets.decompose->forward(image);
  result.albedo = dec.albedo.squeeze(0).to(torch::kFloat32);
  result.shading = dec.shading.squeeze(0).to(torch::kFloat32);
  result.recon_as = result.albedo * result.shading;
  result.spec_mask = derive_spec_mask(frame.pixels, result.recon_as, config.mask_threshold);
  if (second_frame) {
    second_frame->validate();
    auto other = second_frame->pixels.unsqueeze(0).to(dtype);
    networks.check_input(other);
    auto raw = mutable_nets.pose->forward(image, other).to(torch::kFloat64);
    auto vec = PoseVector::from_network(raw);
    vec.axis_angle = wrap_axis_angle(vec.axis_angle);
    result.pose = pose_vec_to_se3(vec);
  }
  return result;
}

void write_inference_outputs(const fs::path& out_dir, const std::string& stem, const Frame& frame,
                             const InferenceResult& result, double s_max) {
  const std::string file = stem + ".png";
  save_png8(out_dir / "input" / file, frame.pixels);
  save_png8(out_dir / "albedo" / file, result.albedo);
  save_png8(out_dir / "shading" / file, result.shading / s_max);
  save_png8(out_dir / "recon" / file, result.recon_as);
  save_png8(out_dir / "mask" / file, result.spec_mask);

  auto depth = result.depth.squeeze(0).to(torch::kFloat64);
  const double lo = depth.min().item<double>();
  const double hi = depth.max().item<double>();
  auto normalized = hi > lo ? (depth - lo) / (hi - lo) : torch::zeros_like(depth);
  save_png16(out_dir / "depth" / file, normalized);
  nlohmann::json sidecar{{"min", lo}, {"max", hi}};
  write_text_atomic(out_dir / "depth" / (stem + ".json"), sidecar.dump(2) + "\n");

  if (result.pose) {
    auto r = result.pose->rotation[0].to(torch::kFloat64);
    auto t = result.pose->translation[0].to(torch::kFloat64);
    std::string text;
    char buf[64];
    for (int i = 0; i < 3; ++i) {
      for (int j = 0; j < 3; ++j) {
        std::snprintf(buf, sizeof(buf), "%.9g ", r[i][j].item<double>());
        text += buf;
      }
      std::snprintf(buf, sizeof(buf), "%.9g\n", t[i].item<double>());
      text += buf;
    }
    write_text_atomic(out_dir / "pose" / (stem + ".txt"), text);
  }
}

torch::Tensor read_depth_png(const fs::path& png_path) {
  auto sidecar_path = png_path;
  sidecar_path.replace_extension(".json");
  std::ifstream in(sidecar_path);
  if (!in) throw Error(ErrorKind::MissingArtifacts, "missing depth sidecar " + sidecar_path.string());
  nlohmann::json sidecar;
  try {
    in >> sidecar;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::InvalidInput, "bad depth sidecar " + sidecar_path.string());
  }
  const double lo = sidecar.at("min").get<double>();
  const double hi = sidecar.at("max").get<double>();
  return lo + (hi - lo) * load_png16_raw(png_path) / 65535.0;
}

torch::Tensor colorize_depth(const torch::Tensor& normalized_depth, double clip) {
  auto n = normalized_depth.to(torch::kFloat64);
  if (n.dim() == 3) n = n.squeeze(0);
  auto index = (n.clamp(0.0, clip) / clip * 255.0).round().to(torch::kUInt8).contiguous();
  cv::Mat gray(static_cast<int>(index.size(0)), static_cast<int>(index.size(1)), CV_8UC1, index.data_ptr<uint8_t>());
  cv::Mat bgr;
  cv::applyColorMap(gray, bgr, cv::COLORMAP_VIRIDIS);
  cv::Mat rgb;
  cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
  auto hwc = torch::from_blob(rgb.data, {rgb.rows, rgb.cols, 3}, torch::kUInt8);
  return hwc.permute({2, 0, 1}).to(torch::kFloat32).div(255.0).contiguous();
}

int export_panels(const fs::path& results_dir, const fs::path& out_dir) {
  const auto input_dir = results_dir / "input";
  if (!fs::is_directory(input_dir)) throw Error(ErrorKind::MissingArtifacts, "no input/ directory in " + results_dir.string());
  int written = 0;
  for (const auto& input_path : list_image_files(input_dir)) {
    const auto file = input_path.filename();
    const auto stem = input_path.stem().string();
    for (const char* sub : {"albedo", "shading", "depth", "mask"}) {
      if (!fs::exists(results_dir / sub / file)) {
        throw Error(ErrorKind::MissingArtifacts, std::string(sub) + "/" + file.string() + " is missing");
      }
    }
    auto input = load_image(input_path);
    auto albedo = load_image(results_dir / "albedo" / file);
    auto shading = load_image(results_dir / "shading" / file);
    auto mask = load_image(results_dir / "mask" / file);
    auto depth_tile = colorize_depth(load_png16_raw(results_dir / "depth" / file) / 65535.0);
    for (const auto& tile : {albedo, shading, mask, depth_tile}) {
      if (tile.sizes() != input.sizes()) throw Error(ErrorKind::InvalidInput, "tile size mismatch for " + stem);
    }
    save_png8(out_dir / (stem + ".png"), torch::cat({input, albedo, shading, depth_tile, mask}, 2));
    ++written;
  }
  return written;
}

}  // namespace shades
