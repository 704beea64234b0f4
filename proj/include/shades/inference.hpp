#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include <torch/torch.h>

#include "shades/ingest.hpp"
#include "shades/networks.hpp"

namespace shades {

struct InferenceConfig {
  double mask_threshold = 50.0;  // on the 0..255 intensity scale

  static InferenceConfig from_key_values(const KeyValueFile& kv);
  void write(KeyValueFile& kv) const;
  void validate() const;
};

struct InferenceResult {
  torch::Tensor depth;      // [1,H,W]
  torch::Tensor albedo;     // [3,H,W]
  torch::Tensor shading;    // [1,H,W]
  torch::Tensor recon_as;   // [3,H,W], albedo * shading
  torch::Tensor spec_mask;  // [H,W] in {0,1}
  std::optional<PoseSE3> pose;
};

/// Max-channel residual frame - recon_as compared against threshold / 255.
/// Negative residuals never flag.
torch::Tensor derive_spec_mask(const torch::Tensor& frame, const torch::Tensor& recon_as, double threshold);

/// Single-frame prediction; the pose is estimated only when a second frame is
/// supplied. Throws InvalidInput when the frame does not match the trained size.
InferenceResult infer(const Networks& networks, const Frame& frame, const std::optional<Frame>& second_frame = std::nullopt,
                      const InferenceConfig& config = {});

/// Writes the per-frame artifacts below `out_dir`:
///   input/<stem>.png, albedo/<stem>.png, shading/<stem>.png (S / s_max),
///   recon/<stem>.png, mask/<stem>.png ({0,255}),
///   depth/<stem>.png (16-bit, min-max normalized) + depth/<stem>.json {min,max},
///   pose/<stem>.txt (3x4 [R|t]) when a pose is present.
void write_inference_outputs(const std::filesystem::path& out_dir, const std::string& stem, const Frame& frame,
                             const InferenceResult& result, double s_max);

/// Reads depth/<stem>.png + json back into metric depth [H,W] (float64).
torch::Tensor read_depth_png(const std::filesystem::path& png_path);

// ---------------------------------------------------------------------------
// Figure panels

/// Depth visualization: normalized depth is clipped at `clip` and the clipped
/// range is mapped through a perceptually uniform colormap. Returns [3,H,W].
torch::Tensor colorize_depth(const torch::Tensor& normalized_depth, double clip = 0.8);

/// One horizontal panel (input | albedo | shading | depth | mask) per frame in
/// an `infer` results directory, written to `out_dir/<stem>.png`.
/// Returns the number of panels. Throws MissingArtifacts if a tile is absent.
int export_panels(const std::filesystem::path& results_dir, const std::filesystem::path& out_dir);

}  // namespace shades
