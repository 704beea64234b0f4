#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "shades/key_value.hpp"

namespace shades {

/// Color image in [0,1] stored as float32 [3,H,W], tagged with its position
/// in a sequence.
struct Frame {
  torch::Tensor pixels;
  std::string seq_id;
  int index = 0;

  int64_t height() const { return pixels.size(1); }
  int64_t width() const { return pixels.size(2); }

  /// Throws InvalidInput unless pixels are a finite [3,H,W] tensor in [0,1].
  void validate() const;
};

/// Pinhole intrinsics plus radial-tangential distortion (k1, k2, p1, p2, k3).
struct CameraModel {
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.0;
  double cy = 0.0;
  std::array<double, 5> dist{};

  /// Reads fx, fy, cx, cy and optional k1, k2, p1, p2, k3 from a key=value file.
  static CameraModel load(const std::filesystem::path& path);
  static CameraModel from_key_values(const KeyValueFile& kv);

  /// Throws InvalidCamera when K is singular or not finite.
  void validate() const;

  bool has_distortion() const;

  /// 3x3 intrinsics and inverse as tensors of the requested dtype.
  torch::Tensor K(torch::ScalarType dtype = torch::kFloat64) const;
  torch::Tensor K_inv(torch::ScalarType dtype = torch::kFloat64) const;

  /// Intrinsics after the centered square crop of a raw_h x raw_w image and a
  /// resize to out_size, using the half-pixel-center convention.
  CameraModel for_crop_resize(int64_t raw_h, int64_t raw_w, int64_t out_size) const;

  /// Intrinsics after a horizontal flip of a width-`width` image.
  CameraModel flipped_horizontally(int64_t width) const;

  /// Applies the distortion model to normalized image coordinates.
  std::array<double, 2> distort_normalized(double x, double y) const;

  /// Inverts distort_normalized by fixed-point iteration.
  std::array<double, 2> undistort_normalized(double xd, double yd, int iterations = 5) const;
};

struct FramePair {
  Frame target;
  Frame source;
  int gap = 0;
};

/// Index form of a pair: positions within one sequence.
struct PairIndex {
  int target = 0;
  int source = 0;
  int gap = 0;
};

struct IngestConfig {
  int out_size = 288;
  std::vector<int> gaps{-1, 1};
  int frame_cap = 0;  // 0: unlimited

  static IngestConfig from_key_values(const KeyValueFile& kv);
  void write(KeyValueFile& kv) const;
  void validate() const;
};

/// Centered largest-square crop followed by bilinear resize to out_size x out_size.
/// `raw` is [3,H,W]; the result is float32 in [0,1].
torch::Tensor crop_resize(const torch::Tensor& raw, int out_size);

/// Inverse-mapping undistortion: every output pixel is pushed through the
/// distortion model and the input is bilinearly sampled there. Samples that
/// fall outside the input are 0.
torch::Tensor undistort(const torch::Tensor& image, const CameraModel& cam);
Frame undistort(const Frame& frame, const CameraModel& cam);

/// All (target, source) index pairs with 0 <= target + gap < length, ordered by
/// target and then by ascending gap. Throws InsufficientFrames when length < 2.
std::vector<PairIndex> sample_pair_indices(int length, const std::vector<int>& gaps);
std::vector<FramePair> sample_pairs(const std::vector<Frame>& sequence, const std::vector<int>& gaps);

/// A directory of numbered frames.
struct SequenceSource {
  std::string seq_id;
  std::filesystem::path dir;
  std::vector<std::filesystem::path> files;
};

/// If `data_dir` holds images it is a single sequence; otherwise each
/// subdirectory holding images is one. Prior-cache siblings (`*_rem`,
/// `*_mask`) are skipped. `frame_cap` > 0 truncates each sequence.
std::vector<SequenceSource> discover_sequences(const std::filesystem::path& data_dir, int frame_cap = 0);

/// Loads a raw frame and applies crop/resize and, when a camera is given,
/// undistortion with intrinsics adjusted to the processed resolution.
class FrameLoader {
 public:
  FrameLoader(IngestConfig config, std::optional<CameraModel> raw_camera);

  Frame load(const std::filesystem::path& path, const std::string& seq_id, int index) const;

  /// Intrinsics valid for frames produced by `load` from raw_h x raw_w inputs.
  CameraModel processed_camera(int64_t raw_h, int64_t raw_w) const;

  const IngestConfig& config() const { return config_; }

 private:
  IngestConfig config_;
  std::optional<CameraModel> raw_camera_;
};

}  // namespace shades
