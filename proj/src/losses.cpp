#include "shades/losses.hpp"

#include "shades/error.hpp"

namespace F = torch::nn::functional;

namespace shades {
namespace {

void require_same_shape(const torch::Tensor& a, const torch::Tensor& b, const char* op) {
  if (!a.defined() || !b.defined() || a.sizes() != b.sizes()) {
    throw Error(ErrorKind::InvalidInput, std::string(op) + ": shape mismatch");
  }
  if (a.dim() != 4) throw Error(ErrorKind::InvalidInput, std::string(op) + ": expected [B,C,H,W]");
}

torch::Tensor pool3x3(const torch::Tensor& x) {
  auto padded = F::pad(x, F::PadFuncOptions({1, 1, 1, 1}).mode(torch::kReflect));
  return F::avg_pool2d(padded, F::AvgPool2dFuncOptions(3).stride(1));
}

}  // namespace

LossWeights LossWeights::from_key_values(const KeyValueFile& kv) {
  LossWeights w;
  w.alpha = kv.get_double("alpha", w.alpha);
  w.lambda_d = kv.get_double("lambda_d", w.lambda_d);
  w.lambda_a = kv.get_double("lambda_a", w.lambda_a);
  w.lambda_r = kv.get_double("lambda_r", w.lambda_r);
  w.lambda_es = kv.get_double("lambda_es", w.lambda_es);
  w.normalize_smoothness_depth = kv.get_bool("normalize_smoothness_depth", w.normalize_smoothness_depth);
  w.validate();
  return w;
}

void LossWeights::write(KeyValueFile& kv) const {
  kv.set("alpha", format_number(alpha));
  kv.set("lambda_d", format_number(lambda_d));
  kv.set("lambda_a", format_number(lambda_a));
  kv.set("lambda_r", format_number(lambda_r));
  kv.set("lambda_es", format_number(lambda_es));
  kv.set("normalize_smoothness_depth", normalize_smoothness_depth ? "true" : "false");
}

void LossWeights::validate() const {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw Error(ErrorKind::InvalidConfig, "alpha must be in [0,1]");
  for (double l : {lambda_d, lambda_a, lambda_r, lambda_es}) {
    if (!(l >= 0.0)) throw Error(ErrorKind::InvalidConfig, "loss weights must be >= 0");
  }
}

torch::Tensor ssim(const torch::Tensor& x, const torch::Tensor& y) {
  require_same_shape(x, y, "ssim");
  if (x.size(2) < 2 || x.size(3) < 2) throw Error(ErrorKind::InvalidInput, "ssim: image must be at least 2x2");
  auto mu_x = pool3x3(x);
  auto mu_y = pool3x3(y);
  auto sigma_x = pool3x3(x * x) - mu_x * mu_x;
  auto sigma_y = pool3x3(y * y) - mu_y * mu_y;
  auto sigma_xy = pool3x3(x * y) - mu_x * mu_y;
  // Written so that x == y gives numerator == denominator bit-for-bit.
  auto numerator = (mu_x * mu_y + mu_x * mu_y + kSsimC1) * (sigma_xy + sigma_xy + kSsimC2);
  auto denominator = (mu_x * mu_x + mu_y * mu_y + kSsimC1) * (sigma_x + sigma_y + kSsimC2);
  return numerator / denominator;
}

torch::Tensor photometric_loss(const torch::Tensor& a, const torch::Tensor& b, const LossWeights& weights) {
  require_same_shape(a, b, "photometric_loss");
  auto l1 = (a - b).abs().mean(1, true);
  if (weights.alpha == 0.0) return l1;
  auto dssim = ((1.0 - ssim(a, b)) / 2.0).clamp(0.0, 1.0).mean(1, true);
  if (weights.alpha == 1.0) return dssim;
  return weights.alpha * dssim + (1.0 - weights.alpha) * l1;
}

torch::Tensor decomposition_loss(const torch::Tensor& albedo, const torch::Tensor& shading, const torch::Tensor& i_rem,
                                 const LossWeights& weights) {
  if (!albedo.defined() || !shading.defined() || shading.dim() != 4 || albedo.dim() != 4 ||
      (shading.size(1) != 1 && shading.size(1) != albedo.size(1)) || shading.size(0) != albedo.size(0) ||
      shading.size(2) != albedo.size(2) || shading.size(3) != albedo.size(3)) {
    throw Error(ErrorKind::InvalidInput, "decomposition_loss: albedo/shading shape mismatch");
  }
  return photometric_loss(albedo * shading, i_rem, weights).mean();
}

torch::Tensor albedo_loss(const torch::Tensor& albedo_target, const torch::Tensor& albedo_source_warped) {
  require_same_shape(albedo_target, albedo_source_warped, "albedo_loss");
  return (albedo_target - albedo_source_warped).abs().mean(1, true);
}

torch::Tensor smoothness_loss(const torch::Tensor& depth, const torch::Tensor& image, bool normalize_depth) {
  if (!depth.defined() || depth.dim() != 4 || depth.size(1) != 1 || !image.defined() || image.dim() != 4 ||
      depth.size(0) != image.size(0) || depth.size(2) != image.size(2) || depth.size(3) != image.size(3)) {
    throw Error(ErrorKind::InvalidInput, "smoothness_loss: depth [B,1,H,W] and image [B,C,H,W] must agree spatially");
  }
  auto d = depth;
  if (normalize_depth) d = depth / (depth.mean({2, 3}, true) + 1e-7);
  auto grad_d_x = (d.slice(3, 1) - d.slice(3, 0, -1)).abs();
  auto grad_d_y = (d.slice(2, 1) - d.slice(2, 0, -1)).abs();
  auto grad_i_x = (image.slice(3, 1) - image.slice(3, 0, -1)).abs().mean(1, true);
  auto grad_i_y = (image.slice(2, 1) - image.slice(2, 0, -1)).abs().mean(1, true);
  auto term_x = grad_d_x * torch::exp(-grad_i_x);
  auto term_y = grad_d_y * torch::exp(-grad_i_y);
  auto zero = torch::zeros({}, depth.options());
  return (term_x.numel() ? term_x.mean() : zero) + (term_y.numel() ? term_y.mean() : zero);
}

torch::Tensor automask_mu1(const torch::Tensor& target, const std::vector<torch::Tensor>& warped_sources,
                           const std::vector<torch::Tensor>& raw_sources, const LossWeights& weights) {
  if (warped_sources.empty() || raw_sources.empty()) throw Error(ErrorKind::InvalidInput, "automask_mu1: no sources");
  torch::NoGradGuard no_grad;
  auto best_of = [&](const std::vector<torch::Tensor>& images) {
    torch::Tensor best;
    for (const auto& img : images) {
      auto loss = photometric_loss(target.detach(), img.detach(), weights);
      best = best.defined() ? torch::minimum(best, loss) : loss;
    }
    return best;
  };
  return (best_of(warped_sources) < best_of(raw_sources)).to(target.scalar_type());
}

torch::Tensor masked_mean(const torch::Tensor& map, const torch::Tensor& mask) {
  auto m = mask.detach().to(map.scalar_type());
  return (map * m).sum() / m.sum().clamp_min(1.0);
}

AutoMask AutoMask::combine(const torch::Tensor& mu1, const torch::Tensor& mu2) {
  auto a = mu1.detach();
  auto b = mu2.detach().to(a.scalar_type());
  return {a, b, a * b};
}

LossBreakdown combine_losses(const LossTerms& terms, const AutoMask& masks, const LossWeights& weights) {
  if (masks.mu.sizes() != terms.l_a_map.sizes() || masks.mu.sizes() != terms.l_r_map.sizes()) {
    throw Error(ErrorKind::InvalidInput, "total_loss: mask shape mismatch");
  }
  LossBreakdown out;
  out.l_d_t = terms.l_d_t;
  out.l_d_s = terms.l_d_s;
  out.per_pixel_r = terms.l_r_map;
  out.mask_empty = masks.mu.sum().item<double>() == 0.0;
  out.l_a = masked_mean(terms.l_a_map, masks.mu);
  out.l_r = masked_mean(terms.l_r_map, masks.mu);
  out.l_es = terms.l_es;
  out.total = weights.lambda_d * (out.l_d_t + out.l_d_s) + weights.lambda_a * out.l_a + weights.lambda_r * out.l_r +
              weights.lambda_es * out.l_es;
  return out;
}

LossBreakdown total_loss(const LossInputs& in, const AutoMask& masks, const LossWeights& weights) {
  LossTerms terms;
  terms.l_d_t = photometric_loss(in.recon_target, in.i_rem_target, weights).mean();
  terms.l_d_s = photometric_loss(in.recon_source, in.i_rem_source, weights).mean();
  terms.l_a_map = albedo_loss(in.albedo_target, in.albedo_source_warped);
  terms.l_r_map = photometric_loss(in.recon_source_warped, in.i_rem_target, weights);
  terms.l_es = smoothness_loss(in.depth_target, in.image_target, weights.normalize_smoothness_depth);
  return combine_losses(terms, masks, weights);
}

}  // namespace shades
