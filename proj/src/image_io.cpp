#include "shades/image_io.hpp"

#include <algorithm>
#include <fstream>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "shades/error.hpp"

namespace fs = std::filesystem;

namespace shades {
namespace {

fs::path temp_sibling(const fs::path& path) {
  // Keep the extension so the encoder is chosen from it.
  return path.parent_path() / ("." + path.stem().string() + ".tmp" + path.extension().string());
}

void write_mat_atomic(const fs::path& path, const cv::Mat& mat) {
  if (!path.parent_path().empty()) fs::create_directories(path.parent_path());
  const fs::path tmp = temp_sibling(path);
  if (!cv::imwrite(tmp.string(), mat)) throw Error(ErrorKind::Io, "cannot write " + path.string());
  fs::rename(tmp, path);
}

cv::Mat to_mat(const torch::Tensor& image, int cv_depth, double full_scale) {
  torch::Tensor chw = image.detach().to(torch::kCPU, torch::kDouble);
  if (chw.dim() == 2) chw = chw.unsqueeze(0);
  if (chw.dim() != 3 || (chw.size(0) != 1 && chw.size(0) != 3)) {
    throw Error(ErrorKind::InvalidInput, "expected [H,W], [1,H,W] or [3,H,W] image");
  }
  const int channels = static_cast<int>(chw.size(0));
  const int rows = static_cast<int>(chw.size(1));
  const int cols = static_cast<int>(chw.size(2));
  torch::Tensor hwc = (chw.clamp(0.0, 1.0) * full_scale).round().permute({1, 2, 0}).contiguous();
  if (channels == 3) hwc = hwc.flip({2}).contiguous();  // RGB -> BGR
  cv::Mat as_double(rows, cols, CV_64FC(channels), hwc.data_ptr<double>());
  cv::Mat out;
  as_double.convertTo(out, CV_MAKETYPE(cv_depth, channels));
  return out;
}

bool numeric_stem(const fs::path& p) {
  const std::string stem = p.stem().string();
  return !stem.empty() && std::all_of(stem.begin(), stem.end(), [](unsigned char c) { return std::isdigit(c); });
}

}  // namespace

torch::Tensor load_image(const fs::path& path) {
  cv::Mat raw = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
  if (raw.empty()) throw Error(ErrorKind::Io, "cannot read image " + path.string());
  double scale = 1.0;
  switch (raw.depth()) {
    case CV_8U: scale = 1.0 / 255.0; break;
    case CV_16U: scale = 1.0 / 65535.0; break;
    case CV_32F: break;
    default: throw Error(ErrorKind::InvalidInput, "unsupported pixel depth in " + path.string());
  }
  cv::Mat rgb;
  switch (raw.channels()) {
    case 1: cv::cvtColor(raw, rgb, cv::COLOR_GRAY2RGB); break;
    case 3: cv::cvtColor(raw, rgb, cv::COLOR_BGR2RGB); break;
    case 4: cv::cvtColor(raw, rgb, cv::COLOR_BGRA2RGB); break;
    default: throw Error(ErrorKind::InvalidInput, "unsupported channel count in " + path.string());
  }
  cv::Mat as_float;
  rgb.convertTo(as_float, CV_32FC3, scale);
  auto hwc = torch::from_blob(as_float.data, {as_float.rows, as_float.cols, 3}, torch::kFloat32);
  return hwc.permute({2, 0, 1}).clone().clamp_(0.0, 1.0);
}

torch::Tensor load_png16_raw(const fs::path& path) {
  cv::Mat raw = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
  if (raw.empty()) throw Error(ErrorKind::Io, "cannot read image " + path.string());
  if (raw.channels() != 1) throw Error(ErrorKind::InvalidInput, "expected single-channel PNG: " + path.string());
  cv::Mat as_double;
  raw.convertTo(as_double, CV_64F);
  return torch::from_blob(as_double.data, {as_double.rows, as_double.cols}, torch::kDouble).clone();
}

void save_png8(const fs::path& path, const torch::Tensor& image) {
  write_mat_atomic(path, to_mat(image, CV_8U, 255.0));
}

void save_png16(const fs::path& path, const torch::Tensor& image) {
  write_mat_atomic(path, to_mat(image, CV_16U, 65535.0));
}

void write_text_atomic(const fs::path& path, const std::string& text) {
  if (!path.parent_path().empty()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.parent_path() / ("." + path.filename().string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::Io, "cannot write " + path.string());
    out << text;
  }
  fs::rename(tmp, path);
}

std::vector<fs::path> list_image_files(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw Error(ErrorKind::Io, "not a directory: " + dir.string());
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    std::string ext = entry.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    const std::string name = entry.path().filename().string();
    if (!name.empty() && name.front() == '.') continue;
    if (ext == ".png" || ext == ".jpg" || ext == ".jpeg") files.push_back(entry.path());
  }
  const bool all_numeric = std::all_of(files.begin(), files.end(), numeric_stem);
  std::sort(files.begin(), files.end(), [all_numeric](const fs::path& a, const fs::path& b) {
    if (all_numeric) {
      const auto na = std::stoll(a.stem().string());
      const auto nb = std::stoll(b.stem().string());
      if (na != nb) return na < nb;
    }
    return a.filename() < b.filename();
  });
  return files;
}

}  // namespace shades
