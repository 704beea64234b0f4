#include "shades/networks.hpp"

#include <cmath>

#include "shades/error.hpp"

namespace nn = torch::nn;
namespace F = torch::nn::functional;

namespace shades {

NetworkConfig NetworkConfig::from_key_values(const KeyValueFile& kv, int image_size) {
  NetworkConfig c;
  c.image_size = image_size;
  c.levels = kv.get_int("levels", c.levels);
  c.base_width = kv.get_int("base_width", c.base_width);
  c.d_min = kv.get_double("d_min", c.d_min);
  c.d_max = kv.get_double("d_max", c.d_max);
  c.pose_scale = kv.get_double("pose_scale", c.pose_scale);
  c.s_max = kv.get_double("s_max", c.s_max);
  c.zero_init_pose = kv.get_bool("zero_init_pose", c.zero_init_pose);
  c.validate();
  return c;
}

void NetworkConfig::write(KeyValueFile& kv) const {
  kv.set("levels", std::to_string(levels));
  kv.set("base_width", std::to_string(base_width));
  kv.set("d_min", format_number(d_min));
  kv.set("d_max", format_number(d_max));
  kv.set("pose_scale", format_number(pose_scale));
  kv.set("s_max", format_number(s_max));
  kv.set("zero_init_pose", zero_init_pose ? "true" : "false");
}

void NetworkConfig::validate() const {
  if (levels < 1 || levels > 6) throw Error(ErrorKind::InvalidConfig, "levels must be in [1,6]");
  if (base_width < 1) throw Error(ErrorKind::InvalidConfig, "base_width must be >= 1");
  if (!(d_min > 0.0) || !(d_max > d_min)) throw Error(ErrorKind::InvalidConfig, "need 0 < d_min < d_max");
  if (!(pose_scale > 0.0)) throw Error(ErrorKind::InvalidConfig, "pose_scale must be > 0");
  if (!(s_max > 0.0)) throw Error(ErrorKind::InvalidConfig, "s_max must be > 0");
  const int stride = 1 << levels;
  if (image_size < 2 * stride || image_size % stride != 0) {
    throw Error(ErrorKind::InvalidConfig, "image size " + std::to_string(image_size) + " must be a multiple of " +
                                              std::to_string(stride) + " and at least " + std::to_string(2 * stride));
  }
}

std::vector<int64_t> NetworkConfig::widths() const {
  std::vector<int64_t> w;
  for (int i = 0; i <= levels; ++i) w.push_back(static_cast<int64_t>(base_width) << std::min(i, 3));
  return w;
}

// ---------------------------------------------------------------------------

ConvBlockImpl::ConvBlockImpl(int64_t in, int64_t out, int64_t stride) {
  conv_ = register_module("conv", nn::Conv2d(nn::Conv2dOptions(in, out, 3).stride(stride).padding(1).padding_mode(torch::kReflect)));
}

torch::Tensor ConvBlockImpl::forward(const torch::Tensor& x) { return F::elu(conv_->forward(x)); }

EncoderImpl::EncoderImpl(int64_t in_channels, const std::vector<int64_t>& widths) {
  stem_ = register_module("stem", ConvBlock(in_channels, widths[0]));
  down_ = register_module("down", nn::ModuleList());
  for (std::size_t i = 1; i < widths.size(); ++i) {
    down_->push_back(nn::Sequential(ConvBlock(widths[i - 1], widths[i], 2), ConvBlock(widths[i], widths[i])));
  }
}

std::vector<torch::Tensor> EncoderImpl::forward(const torch::Tensor& x) {
  std::vector<torch::Tensor> features{stem_->forward((x - 0.45) / 0.225)};
  for (const auto& stage : *down_) features.push_back(stage->as<nn::Sequential>()->forward(features.back()));
  return features;
}

DecoderImpl::DecoderImpl(const std::vector<int64_t>& widths, int64_t out_channels) {
  reduce_ = register_module("reduce", nn::ModuleList());
  fuse_ = register_module("fuse", nn::ModuleList());
  // Index i of reduce_/fuse_ handles the step from resolution i+1 to i.
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
    reduce_->push_back(ConvBlock(widths[i + 1], widths[i]));
    fuse_->push_back(ConvBlock(2 * widths[i], widths[i]));
  }
  head_ = register_module("head", nn::Conv2d(nn::Conv2dOptions(widths[0], out_channels, 3).padding(1).padding_mode(torch::kReflect)));
}

torch::Tensor DecoderImpl::forward(const std::vector<torch::Tensor>& features) {
  auto x = features.back();
  for (int i = static_cast<int>(reduce_->size()) - 1; i >= 0; --i) {
    x = reduce_[i]->as<ConvBlock>()->forward(x);
    x = F::interpolate(x, F::InterpolateFuncOptions().scale_factor(std::vector<double>{2.0, 2.0}).mode(torch::kNearest));
    x = fuse_[i]->as<ConvBlock>()->forward(torch::cat({x, features[i]}, 1));
  }
  return head_->forward(x);
}

// ---------------------------------------------------------------------------

DepthNetImpl::DepthNetImpl(const NetworkConfig& config) {
  const auto widths = config.widths();
  encoder = register_module("encoder", Encoder(3, widths));
  decoder = register_module("decoder", Decoder(widths, 1));
}

torch::Tensor DepthNetImpl::forward(const torch::Tensor& image) {
  return torch::sigmoid(decoder->forward(encoder->forward(image)));
}

PoseNetImpl::PoseNetImpl(const NetworkConfig& config) : scale_(config.pose_scale) {
  const auto widths = config.widths();
  features = register_module("features", nn::Sequential());
  int64_t in = 6;
  for (std::size_t i = 1; i < widths.size(); ++i) {
    features->push_back(ConvBlock(in, widths[i], 2));
    in = widths[i];
  }
  head = register_module("head", nn::Conv2d(nn::Conv2dOptions(in, 6, 1)));
  if (config.zero_init_pose) {
    torch::NoGradGuard no_grad;
    head->weight.zero_();
    head->bias.zero_();
  }
}

torch::Tensor PoseNetImpl::forward(const torch::Tensor& target, const torch::Tensor& source) {
  auto x = head->forward(features->forward(torch::cat({target, source}, 1)));
  return x.mean({2, 3}) * scale_;
}

DecomposeNetImpl::DecomposeNetImpl(const NetworkConfig& config) : s_max_(config.s_max) {
  const auto widths = config.widths();
  encoder = register_module("encoder", Encoder(3, widths));
  albedo_decoder = register_module("albedo_decoder", Decoder(widths, 3));
  shading_decoder = register_module("shading_decoder", Decoder(widths, 1));
}

Decomposition DecomposeNetImpl::forward(const torch::Tensor& image) {
  auto features = encoder->forward(image);
  auto albedo = torch::sigmoid(albedo_decoder->forward(features));
  // s_max * (1 - exp(-softplus(x))) == s_max * sigmoid(x): bounded in (0, s_max).
  auto shading = s_max_ * torch::sigmoid(shading_decoder->forward(features));
  return {albedo, shading};
}

// ---------------------------------------------------------------------------

Networks::Networks(const NetworkConfig& cfg, uint64_t seed) : config(cfg) {
  config.validate();
  torch::manual_seed(seed);
  depth = DepthNet(config);
  pose = PoseNet(config);
  decompose = DecomposeNet(config);
}

std::vector<std::pair<std::string, torch::Tensor>> Networks::named_parameters() const {
  std::vector<std::pair<std::string, torch::Tensor>> out;
  auto append = [&out](const std::string& prefix, const nn::Module& module) {
    for (const auto& item : module.named_parameters(true)) out.emplace_back(prefix + "." + item.key(), item.value());
  };
  append("depth", *depth);
  append("pose", *pose);
  append("decompose", *decompose);
  return out;
}

std::vector<torch::Tensor> Networks::parameters() const {
  std::vector<torch::Tensor> out;
  for (auto& [name, tensor] : named_parameters()) out.push_back(tensor);
  return out;
}

void Networks::to(torch::ScalarType dtype) {
  depth->to(dtype);
  pose->to(dtype);
  decompose->to(dtype);
}

void Networks::train(bool on) {
  depth->train(on);
  pose->train(on);
  decompose->train(on);
}

void Networks::check_input(const torch::Tensor& image) const {
  if (!image.defined() || image.dim() != 4 || image.size(1) != 3 || image.size(2) != config.image_size ||
      image.size(3) != config.image_size) {
    throw Error(ErrorKind::InvalidInput, "network input must be [B,3," + std::to_string(config.image_size) + "," +
                                             std::to_string(config.image_size) + "]");
  }
}

// ---------------------------------------------------------------------------

torch::Tensor disp_to_depth(const torch::Tensor& disp, double d_min, double d_max) {
  if (!(d_min > 0.0) || !(d_max > d_min)) throw Error(ErrorKind::InvalidConfig, "need 0 < d_min < d_max");
  const double min_disp = 1.0 / d_max;
  const double max_disp = 1.0 / d_min;
  return 1.0 / (min_disp + (max_disp - min_disp) * disp);
}

torch::Tensor depth_to_disp(const torch::Tensor& depth, double d_min, double d_max) {
  if (!(d_min > 0.0) || !(d_max > d_min)) throw Error(ErrorKind::InvalidConfig, "need 0 < d_min < d_max");
  const double min_disp = 1.0 / d_max;
  const double max_disp = 1.0 / d_min;
  return (1.0 / depth - min_disp) / (max_disp - min_disp);
}

PoseVector PoseVector::from_network(const torch::Tensor& raw) {
  if (!raw.defined() || raw.dim() != 2 || raw.size(1) != 6) throw Error(ErrorKind::InvalidInput, "pose vector must be [B,6]");
  return {raw.slice(1, 0, 3), raw.slice(1, 3, 6)};
}

torch::Tensor wrap_axis_angle(const torch::Tensor& axis_angle) {
  auto theta = axis_angle.norm(2, 1, true);
  auto wrapped = axis_angle * (1.0 - 2.0 * M_PI / theta.clamp_min(1e-12));
  return torch::where(theta > M_PI, wrapped, axis_angle);
}

torch::Tensor axis_angle_to_matrix(const torch::Tensor& axis_angle) {
  if (!axis_angle.defined() || axis_angle.dim() != 2 || axis_angle.size(1) != 3) {
    throw Error(ErrorKind::InvalidInput, "axis-angle must be [B,3]");
  }
  const auto batch = axis_angle.size(0);
  auto theta2 = (axis_angle * axis_angle).sum(1);
  auto small = theta2 < 1e-8;
  auto theta2_safe = torch::where(small, torch::ones_like(theta2), theta2);
  auto theta_safe = theta2_safe.sqrt();
  // A = sin(t)/t, B = (1 - cos(t))/t^2 with Taylor branches near zero.
  auto a = torch::where(small, 1.0 - theta2 / 6.0, torch::sin(theta_safe) / theta_safe);
  auto b = torch::where(small, 0.5 - theta2 / 24.0, (1.0 - torch::cos(theta_safe)) / theta2_safe);

  auto wx = axis_angle.select(1, 0);
  auto wy = axis_angle.select(1, 1);
  auto wz = axis_angle.select(1, 2);
  auto zero = torch::zeros_like(wx);
  auto skew = torch::stack({zero, -wz, wy, wz, zero, -wx, -wy, wx, zero}, 1).reshape({batch, 3, 3});
  auto eye = torch::eye(3, axis_angle.options()).unsqueeze(0).expand({batch, 3, 3});
  return eye + a.reshape({batch, 1, 1}) * skew + b.reshape({batch, 1, 1}) * torch::bmm(skew, skew);
}

PoseSE3 pose_vec_to_se3(const PoseVector& v) {
  if (!v.translation.defined() || v.translation.dim() != 2 || v.translation.size(1) != 3) {
    throw Error(ErrorKind::InvalidInput, "translation must be [B,3]");
  }
  return {axis_angle_to_matrix(v.axis_angle), v.translation};
}

}  // namespace shades
