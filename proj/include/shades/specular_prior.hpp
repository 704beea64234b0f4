#pragma once

#include <filesystem>
#include <optional>
#include <utility>

#include <torch/torch.h>

#include "shades/ingest.hpp"
#include "shades/key_value.hpp"

namespace shades {

/// Thresholds of the classical highlight detector. These are module defaults,
/// tuned for bright desaturated blobs on saturated tissue colors.
struct SpecularConfig {
  double percentile = 97.0;      // of the per-frame min-channel distribution
  double max_saturation = 0.25;  // (max - min) / max
  int dilation_radius = 2;
  double inpaint_tolerance = 1e-4;
  int inpaint_max_iterations = 2000;

  static SpecularConfig from_key_values(const KeyValueFile& kv);
  void write(KeyValueFile& kv) const;
  void validate() const;
};

/// Binary [H,W] float32 mask, 1 = specular.
struct SpecularMask {
  torch::Tensor mask;
};

struct InpaintedFrame {
  torch::Tensor pixels;  // [3,H,W]
  SpecularMask source_mask;
};

/// Flags pixels whose min channel exceeds the configured percentile of the
/// frame and whose saturation is below the limit, then dilates by a disk.
SpecularMask segment_specular(const Frame& frame, const SpecularConfig& config = {});

/// Binary dilation of an [H,W] mask by a Euclidean disk of `radius`.
torch::Tensor dilate_disk(const torch::Tensor& mask, int radius);

/// Harmonic fill: masked pixels are relaxed towards the average of their
/// 4-neighbors (Gauss-Seidel) until the largest update drops below the
/// tolerance. Unmasked pixels are copied bit-for-bit.
/// Throws DegenerateMask when every pixel is masked.
InpaintedFrame inpaint(const Frame& frame, const SpecularMask& mask, const SpecularConfig& config = {});

/// segment_specular followed by inpaint.
std::pair<InpaintedFrame, SpecularMask> compute_i_rem(const Frame& frame, const SpecularConfig& config = {});

/// Training priors for one frame.
struct Prior {
  torch::Tensor i_rem;  // [3,H,W]
  torch::Tensor mask;   // [H,W]
};

/// On-disk cache living next to a sequence directory `seq`: inpainted frames in
/// `seq_rem/<stem>.png` (16-bit) and masks in `seq_mask/<stem>.png` ({0,255}).
class PriorCache {
 public:
  explicit PriorCache(const std::filesystem::path& sequence_dir, SpecularConfig config = {});

  std::optional<Prior> lookup(const std::string& stem, int64_t height, int64_t width) const;

  /// Returns the cached prior, computing and storing it on a miss. The value
  /// returned is always the one read back from disk, so first and later runs
  /// observe identical (quantized) data.
  Prior get_or_compute(const Frame& frame, const std::string& stem) const;

  const std::filesystem::path& rem_dir() const { return rem_dir_; }
  const std::filesystem::path& mask_dir() const { return mask_dir_; }

 private:
  SpecularConfig config_;
  std::filesystem::path rem_dir_;
  std::filesystem::path mask_dir_;
};

/// Fills the prior cache of every sequence under `data_dir` (frames go through
/// `loader` first). Cached entries of the right size are kept. Returns the
/// number of priors computed.
int precompute_priors(const std::filesystem::path& data_dir, const FrameLoader& loader, const SpecularConfig& config = {});

}  // namespace shades
