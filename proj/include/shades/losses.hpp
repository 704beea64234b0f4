#pragma once

#include <vector>

#include <torch/torch.h>

#include "shades/key_value.hpp"

// Training objectives. Images are [B,C,H,W]; per-pixel maps and masks are
// [B,1,H,W]. Everything is differentiable and dtype-generic.
namespace shades {

inline constexpr double kSsimC1 = 0.01 * 0.01;
inline constexpr double kSsimC2 = 0.03 * 0.03;

struct LossWeights {
  double alpha = 0.85;
  double lambda_d = 0.2;
  double lambda_a = 0.2;
  double lambda_r = 1.0;
  double lambda_es = 0.01;
  bool normalize_smoothness_depth = true;

  static LossWeights from_key_values(const KeyValueFile& kv);
  void write(KeyValueFile& kv) const;
  void validate() const;
};

/// 3x3 windowed SSIM with reflection padding; returns a [B,C,H,W] map.
torch::Tensor ssim(const torch::Tensor& x, const torch::Tensor& y);

/// alpha * (1 - SSIM) / 2 + (1 - alpha) * |a - b|, both terms averaged over
/// channels. Returns [B,1,H,W].
torch::Tensor photometric_loss(const torch::Tensor& a, const torch::Tensor& b, const LossWeights& weights = {});

/// Mean of photometric_loss(albedo * shading, i_rem). Shading may have one
/// channel, which is broadcast.
torch::Tensor decomposition_loss(const torch::Tensor& albedo, const torch::Tensor& shading, const torch::Tensor& i_rem,
                                 const LossWeights& weights = {});

/// Per-pixel channel-mean |A_t - A_{s->t}|, [B,1,H,W].
torch::Tensor albedo_loss(const torch::Tensor& albedo_target, const torch::Tensor& albedo_source_warped);

/// Edge-aware smoothness of depth [B,1,H,W] guided by image [B,C,H,W].
torch::Tensor smoothness_loss(const torch::Tensor& depth, const torch::Tensor& image, bool normalize_depth = true);

/// 1 where the best warped source explains the target strictly better than the
/// best unwarped source. Returns a {0,1} map without gradient.
torch::Tensor automask_mu1(const torch::Tensor& target, const std::vector<torch::Tensor>& warped_sources,
                           const std::vector<torch::Tensor>& raw_sources, const LossWeights& weights = {});

/// sum(map * mask) / max(sum(mask), 1)
torch::Tensor masked_mean(const torch::Tensor& map, const torch::Tensor& mask);

struct AutoMask {
  torch::Tensor mu1;
  torch::Tensor mu2;
  torch::Tensor mu;

  static AutoMask combine(const torch::Tensor& mu1, const torch::Tensor& mu2);
};

struct LossInputs {
  torch::Tensor recon_target;         // A_t * S_t
  torch::Tensor i_rem_target;
  torch::Tensor recon_source;         // A_s * S_s
  torch::Tensor i_rem_source;
  torch::Tensor albedo_target;        // A_t
  torch::Tensor albedo_source_warped; // A_{s->t}
  torch::Tensor recon_source_warped;  // (A_s * S_s)_{s->t}
  torch::Tensor depth_target;         // D_t
  torch::Tensor image_target;         // I_t
};

struct LossBreakdown {
  torch::Tensor total;
  torch::Tensor l_d_t;
  torch::Tensor l_d_s;
  torch::Tensor l_a;
  torch::Tensor l_r;
  torch::Tensor l_es;
  torch::Tensor per_pixel_r;
  bool mask_empty = false;  // the masked terms contributed nothing
};

/// Unweighted loss terms before masking.
struct LossTerms {
  torch::Tensor l_d_t;    // scalar
  torch::Tensor l_d_s;    // scalar
  torch::Tensor l_a_map;  // [B,1,H,W]
  torch::Tensor l_r_map;  // [B,1,H,W]
  torch::Tensor l_es;     // scalar
};

/// lambda_d (L_d,t + L_d,s) + lambda_a masked_mean(L_a, mu)
///   + lambda_r masked_mean(L_r, mu) + lambda_es L_es
LossBreakdown combine_losses(const LossTerms& terms, const AutoMask& masks, const LossWeights& weights = {});

/// Computes every term from network outputs and combines them.
LossBreakdown total_loss(const LossInputs& in, const AutoMask& masks, const LossWeights& weights = {});

}  // namespace shades
