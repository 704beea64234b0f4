#pragma once

#include <torch/torch.h>

#include "shades/ingest.hpp"

// Differentiable inverse warping. Conventions:
//   images  [B,C,H,W]
//   depth   [B,1,H,W], strictly positive
//   masks   [B,1,H,W] with values in {0,1}, same dtype as the images
//   coords  [B,H,W,2] holding (column, row); the origin is the center of the
//           top-left pixel.
namespace shades {

/// Rigid transform taking target-camera points into the source camera.
struct PoseSE3 {
  torch::Tensor rotation;     // [B,3,3]
  torch::Tensor translation;  // [B,3]

  static PoseSE3 identity(int64_t batch, torch::ScalarType dtype = torch::kFloat64);

  int64_t batch() const { return rotation.size(0); }
  PoseSE3 inverse() const;
  PoseSE3 to(torch::ScalarType dtype) const;

  /// Throws InvalidInput unless every rotation is orthonormal with det +1
  /// within `tol` and the translations are finite.
  void validate(double tol = 1e-6) const;
};

/// Coordinates closer than this to the image border count as inside it.
inline constexpr double kBorderTolerance = 1e-3;

/// Projections with depth at or below this are invalid.
inline constexpr double kMinProjectedDepth = 1e-6;

/// points[b,:,v,u] = depth[b,0,v,u] * K^-1 (u, v, 1)^T. Returns [B,3,H,W].
torch::Tensor backproject(const torch::Tensor& depth, const CameraModel& cam);

struct Reprojection {
  torch::Tensor coords;   // [B,H,W,2]
  torch::Tensor z_valid;  // [B,1,H,W]
};

/// Projects K (R X + t). Pixels whose projected depth is <= kMinProjectedDepth
/// are flagged invalid; their coordinates are finite but meaningless.
Reprojection reproject(const torch::Tensor& points, const PoseSE3& pose, const CameraModel& cam);

struct Sampled {
  torch::Tensor values;    // [B,C,Ho,Wo]
  torch::Tensor inbounds;  // [B,1,Ho,Wo]
};

/// Bilinear lookup of `source` at `coords`. Out-of-bounds and non-finite
/// coordinates yield 0 with inbounds = 0. Differentiable in both arguments.
Sampled bilinear_sample(const torch::Tensor& source, const torch::Tensor& coords);

struct Warped {
  torch::Tensor image;     // I_{s->t}
  torch::Tensor valid;     // mu2: inbounds, in front of the camera, any channel > 0
  torch::Tensor inbounds;  // inbounds and in front of the camera
  torch::Tensor coords;
};

/// Synthesizes the target view from `source` using target depth and the
/// target-to-source pose.
Warped warp(const torch::Tensor& source, const torch::Tensor& depth_target, const PoseSE3& pose,
            const CameraModel& cam);

/// Samples `source` at the coordinates of an earlier warp, zeroed where that
/// warp was geometrically invalid.
torch::Tensor resample(const torch::Tensor& source, const Warped& geometry);

/// "Missing pixel" test: 1 where any channel of `image` is > 0.
torch::Tensor nonzero_pixels(const torch::Tensor& image);

}  // namespace shades
