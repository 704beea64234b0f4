#include "shades/view_synthesis.hpp"

#include "shades/error.hpp"

namespace shades {
namespace {

void require_4d(const torch::Tensor& t, const char* what) {
  if (!t.defined() || t.dim() != 4) {
    throw Error(ErrorKind::InvalidInput, std::string(what) + " must be a [B,C,H,W] tensor");
  }
}

// Homogeneous pixel grid (u, v, 1) as [3, H*W].
torch::Tensor pixel_grid(int64_t height, int64_t width, const torch::TensorOptions& options) {
  auto rows = torch::arange(height, options);
  auto cols = torch::arange(width, options);
  auto grid = torch::meshgrid({rows, cols}, "ij");
  return torch::stack({grid[1].reshape(-1), grid[0].reshape(-1), torch::ones({height * width}, options)});
}

}  // namespace

PoseSE3 PoseSE3::identity(int64_t batch, torch::ScalarType dtype) {
  auto options = torch::TensorOptions().dtype(dtype);
  return {torch::eye(3, options).unsqueeze(0).repeat({batch, 1, 1}), torch::zeros({batch, 3}, options)};
}

PoseSE3 PoseSE3::inverse() const {
  auto rt = rotation.transpose(1, 2);
  auto t = -torch::bmm(rt, translation.unsqueeze(-1)).squeeze(-1);
  return {rt, t};
}

PoseSE3 PoseSE3::to(torch::ScalarType dtype) const { return {rotation.to(dtype), translation.to(dtype)}; }

void PoseSE3::validate(double tol) const {
  if (!rotation.defined() || rotation.dim() != 3 || rotation.size(1) != 3 || rotation.size(2) != 3) {
    throw Error(ErrorKind::InvalidInput, "rotation must be [B,3,3]");
  }
  if (!translation.defined() || translation.dim() != 2 || translation.size(1) != 3 ||
      translation.size(0) != rotation.size(0)) {
    throw Error(ErrorKind::InvalidInput, "translation must be [B,3]");
  }
  auto r = rotation.detach().to(torch::kDouble);
  auto eye = torch::eye(3, r.options()).expand_as(r);
  const double ortho = (torch::bmm(r.transpose(1, 2), r) - eye).abs().max().item<double>();
  const double det = (torch::linalg_det(r) - 1.0).abs().max().item<double>();
  if (!(ortho <= tol) || !(det <= tol)) throw Error(ErrorKind::InvalidInput, "rotation is not in SO(3)");
  if (!torch::isfinite(translation).all().item<bool>()) {
    throw Error(ErrorKind::InvalidInput, "translation is not finite");
  }
}

torch::Tensor backproject(const torch::Tensor& depth, const CameraModel& cam) {
  cam.validate();
  require_4d(depth, "depth");
  if (depth.size(1) != 1) throw Error(ErrorKind::InvalidInput, "depth must have one channel");
  const auto batch = depth.size(0);
  const auto height = depth.size(2);
  const auto width = depth.size(3);
  auto options = depth.options().requires_grad(false);
  auto rays = torch::matmul(cam.K_inv(depth.scalar_type()).to(depth.device()), pixel_grid(height, width, options));
  return (rays.unsqueeze(0) * depth.reshape({batch, 1, height * width})).reshape({batch, 3, height, width});
}

Reprojection reproject(const torch::Tensor& points, const PoseSE3& pose, const CameraModel& cam) {
  cam.validate();
  require_4d(points, "points");
  const auto batch = points.size(0);
  const auto height = points.size(2);
  const auto width = points.size(3);
  auto flat = points.reshape({batch, 3, height * width});
  auto in_source = torch::bmm(pose.rotation.to(points.scalar_type()), flat) +
                   pose.translation.to(points.scalar_type()).unsqueeze(-1);
  auto projected = torch::matmul(cam.K(points.scalar_type()).to(points.device()), in_source);
  auto z = projected.select(1, 2);
  auto z_valid = z > kMinProjectedDepth;
  auto z_safe = torch::where(z_valid, z, torch::ones_like(z));
  auto u = projected.select(1, 0) / z_safe;
  auto v = projected.select(1, 1) / z_safe;
  auto coords = torch::stack({u, v}, -1).reshape({batch, height, width, 2});
  return {coords, z_valid.to(points.scalar_type()).reshape({batch, 1, height, width})};
}

Sampled bilinear_sample(const torch::Tensor& source, const torch::Tensor& coords) {
  require_4d(source, "source");
  if (!coords.defined() || coords.dim() != 4 || coords.size(3) != 2 || coords.size(0) != source.size(0)) {
    throw Error(ErrorKind::InvalidInput, "coords must be [B,H,W,2] with the source batch size");
  }
  const auto batch = source.size(0);
  const auto channels = source.size(1);
  const auto height = source.size(2);
  const auto width = source.size(3);
  const auto out_h = coords.size(1);
  const auto out_w = coords.size(2);

  auto x = coords.select(3, 0);
  auto y = coords.select(3, 1);
  auto finite = torch::isfinite(x) & torch::isfinite(y);
  x = torch::where(finite, x, torch::zeros_like(x));
  y = torch::where(finite, y, torch::zeros_like(y));
  auto inbounds = finite & (x >= -kBorderTolerance) & (x <= (width - 1) + kBorderTolerance) &
                  (y >= -kBorderTolerance) & (y <= (height - 1) + kBorderTolerance);

  auto xc = x.clamp(0.0, static_cast<double>(width - 1));
  auto yc = y.clamp(0.0, static_cast<double>(height - 1));
  auto x0 = xc.detach().floor().clamp(0.0, static_cast<double>(std::max<int64_t>(width - 2, 0)));
  auto y0 = yc.detach().floor().clamp(0.0, static_cast<double>(std::max<int64_t>(height - 2, 0)));
  auto wx = (xc - x0).unsqueeze(1);
  auto wy = (yc - y0).unsqueeze(1);
  auto ix0 = x0.to(torch::kLong);
  auto iy0 = y0.to(torch::kLong);
  auto ix1 = (ix0 + 1).clamp_max(width - 1);
  auto iy1 = (iy0 + 1).clamp_max(height - 1);

  auto flat = source.reshape({batch, channels, height * width});
  auto gather = [&](const torch::Tensor& iy, const torch::Tensor& ix) {
    auto index = (iy * width + ix).reshape({batch, 1, out_h * out_w}).expand({batch, channels, out_h * out_w});
    return flat.gather(2, index).reshape({batch, channels, out_h, out_w});
  };
  auto top = gather(iy0, ix0) * (1 - wx) + gather(iy0, ix1) * wx;
  auto bottom = gather(iy1, ix0) * (1 - wx) + gather(iy1, ix1) * wx;
  auto mask = inbounds.to(source.scalar_type()).unsqueeze(1);
  return {(top * (1 - wy) + bottom * wy) * mask, mask};
}

torch::Tensor nonzero_pixels(const torch::Tensor& image) {
  return (std::get<0>(image.detach().max(1, true)) > 0).to(image.scalar_type());
}

Warped warp(const torch::Tensor& source, const torch::Tensor& depth_target, const PoseSE3& pose,
            const CameraModel& cam) {
  require_4d(source, "source");
  auto points = backproject(depth_target, cam);
  auto projection = reproject(points, pose, cam);
  auto sampled = bilinear_sample(source, projection.coords);
  auto geometric = sampled.inbounds * projection.z_valid.to(source.scalar_type());
  auto image = sampled.values * geometric;
  auto valid = geometric * nonzero_pixels(image);
  return {image, valid, geometric, projection.coords};
}

torch::Tensor resample(const torch::Tensor& source, const Warped& geometry) {
  return bilinear_sample(source, geometry.coords.to(source.scalar_type())).values *
         geometry.inbounds.to(source.scalar_type());
}

}  // namespace shades
