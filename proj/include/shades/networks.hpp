#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <torch/torch.h>

#include "shades/key_value.hpp"
#include "shades/view_synthesis.hpp"

namespace shades {

struct NetworkConfig {
  int image_size = 288;
  int levels = 4;
  int base_width = 16;
  double d_min = 0.1;
  double d_max = 100.0;
  double pose_scale = 0.01;
  double s_max = 2.0;
  bool zero_init_pose = true;

  static NetworkConfig from_key_values(const KeyValueFile& kv, int image_size);
  void write(KeyValueFile& kv) const;
  void validate() const;

  /// Feature widths of encoder stages 0..levels.
  std::vector<int64_t> widths() const;
};

// ---------------------------------------------------------------------------
// Building blocks

/// 3x3 reflection-padded convolution followed by ELU.
class ConvBlockImpl : public torch::nn::Module {
 public:
  ConvBlockImpl(int64_t in, int64_t out, int64_t stride = 1);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  torch::nn::Conv2d conv_{nullptr};
};
TORCH_MODULE(ConvBlock);

class EncoderImpl : public torch::nn::Module {
 public:
  EncoderImpl(int64_t in_channels, const std::vector<int64_t>& widths);
  /// Features at full, 1/2, ..., 1/2^levels resolution.
  std::vector<torch::Tensor> forward(const torch::Tensor& x);

 private:
  ConvBlock stem_{nullptr};
  torch::nn::ModuleList down_;
};
TORCH_MODULE(Encoder);

class DecoderImpl : public torch::nn::Module {
 public:
  DecoderImpl(const std::vector<int64_t>& widths, int64_t out_channels);
  /// Raw (pre-activation) full-resolution output.
  torch::Tensor forward(const std::vector<torch::Tensor>& features);

 private:
  torch::nn::ModuleList reduce_;
  torch::nn::ModuleList fuse_;
  torch::nn::Conv2d head_{nullptr};
};
TORCH_MODULE(Decoder);

// ---------------------------------------------------------------------------
// Networks

/// U-shaped depth network with a sigmoid disparity head, [B,1,H,W] in (0,1).
class DepthNetImpl : public torch::nn::Module {
 public:
  explicit DepthNetImpl(const NetworkConfig& config);
  torch::Tensor forward(const torch::Tensor& image);

  Encoder encoder{nullptr};
  Decoder decoder{nullptr};
};
TORCH_MODULE(DepthNet);

/// Regresses the 6-DoF target-to-source motion from a channel-concatenated
/// (target, source) pair. Output [B,6] = (axis-angle, translation).
class PoseNetImpl : public torch::nn::Module {
 public:
  explicit PoseNetImpl(const NetworkConfig& config);
  torch::Tensor forward(const torch::Tensor& target, const torch::Tensor& source);

  torch::nn::Sequential features{nullptr};
  torch::nn::Conv2d head{nullptr};

 private:
  double scale_;
};
TORCH_MODULE(PoseNet);

struct Decomposition {
  torch::Tensor albedo;   // [B,3,H,W] in (0,1)
  torch::Tensor shading;  // [B,1,H,W] in (0,s_max)

  torch::Tensor recon() const { return albedo * shading; }
};

/// Shared encoder with albedo and shading decoder heads.
class DecomposeNetImpl : public torch::nn::Module {
 public:
  explicit DecomposeNetImpl(const NetworkConfig& config);
  Decomposition forward(const torch::Tensor& image);

  Encoder encoder{nullptr};
  Decoder albedo_decoder{nullptr};
  Decoder shading_decoder{nullptr};

 private:
  double s_max_;
};
TORCH_MODULE(DecomposeNet);

/// The three trainable networks, created from one seed.
struct Networks {
  NetworkConfig config;
  DepthNet depth{nullptr};
  PoseNet pose{nullptr};
  DecomposeNet decompose{nullptr};

  Networks(const NetworkConfig& config, uint64_t seed);

  /// Parameters keyed "depth.*", "pose.*", "decompose.*" in a stable order.
  std::vector<std::pair<std::string, torch::Tensor>> named_parameters() const;
  std::vector<torch::Tensor> parameters() const;

  void to(torch::ScalarType dtype);
  void train(bool on = true);

  /// Throws InvalidInput unless `image` is [B,3,S,S] with S == config.image_size.
  void check_input(const torch::Tensor& image) const;
};

// ---------------------------------------------------------------------------
// Parametrizations

/// depth = 1 / (1/d_max + (1/d_min - 1/d_max) disp)
torch::Tensor disp_to_depth(const torch::Tensor& disp, double d_min, double d_max);
torch::Tensor depth_to_disp(const torch::Tensor& depth, double d_min, double d_max);

struct PoseVector {
  torch::Tensor axis_angle;   // [B,3], radians
  torch::Tensor translation;  // [B,3]

  static PoseVector from_network(const torch::Tensor& raw);
};

/// Maps axis-angle vectors with norm > pi to the equivalent shorter rotation.
torch::Tensor wrap_axis_angle(const torch::Tensor& axis_angle);

/// Rodrigues exponential map; smooth (and differentiable) through zero.
torch::Tensor axis_angle_to_matrix(const torch::Tensor& axis_angle);
PoseSE3 pose_vec_to_se3(const PoseVector& v);

}  // namespace shades
