// SPDX-License-Identifier: Apache-2.0
//
// ResNet18-D + FPN backbone with early fusion of the text grid and the fused
// stride-4 map built from all pyramid levels.
#pragma once

#include <optional>
#include <string>

#include <torch/torch.h>

#include "vibertgrid/textgrid.hpp"

namespace vbg {

enum class FusionStage { kC2, kC3, kC4, kNone };

std::string to_string(FusionStage s);
FusionStage parse_fusion_stage(const std::string& s);
/// Feature stride of a fusion stage (4, 8, 16); 0 for kNone.
int fusion_stride(FusionStage s);

struct BackboneConfig {
  double width_multiplier = 0.25;
  FusionStage fusion_stage = FusionStage::kC3;
  bool use_visual = true;
  bool use_textual = true;
  /// Channel count of the grid fused into the CNN (encoder hidden size).
  int grid_dim = 256;
  double new_layer_std = 0.01;

  void validate() const;
  int channels(int full_width) const;
  int pyramid_channels() const { return channels(256); }
  int grid_stride() const { return fusion_stride(fusion_stage); }
};

struct FeatureSet {
  torch::Tensor p2, p3, p4, p5;  // 1 x F x h x w at strides 4, 8, 16, 32
  torch::Tensor p_fuse;          // 1 x F at stride 4
};

/// Zero-pads an N x C x H x W tensor on the bottom/right to multiples of `multiple`.
torch::Tensor pad_to_multiple(const torch::Tensor& x, int multiple);

class ConvBnImpl : public torch::nn::Module {
 public:
  ConvBnImpl(int in, int out, int kernel, int stride, bool relu);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  torch::nn::Conv2d conv_{nullptr};
  torch::nn::BatchNorm2d bn_{nullptr};
  bool relu_;
};
TORCH_MODULE(ConvBn);

/// ResNet basic block with the ResNet-D shortcut (2x2 average pool, then 1x1
/// conv + BN) when downsampling or changing width.
class BasicBlockImpl : public torch::nn::Module {
 public:
  BasicBlockImpl(int in, int out, int stride);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  ConvBn conv1_{nullptr}, conv2_{nullptr};
  ConvBn shortcut_{nullptr};
  int stride_;
};
TORCH_MODULE(BasicBlock);

/// Channel concatenation of the grid onto stage features followed by a 1x1
/// convolution back to the stage width.
class EarlyFusionImpl : public torch::nn::Module {
 public:
  EarlyFusionImpl(int stage_channels, int grid_channels, double init_std);
  torch::Tensor forward(const torch::Tensor& stage_features, const torch::Tensor& grid_nchw);
  /// Identity on the feature half, zero on the grid half.
  void init_identity();
  torch::nn::Conv2d& reduce() { return reduce_; }

 private:
  int stage_channels_;
  torch::nn::Conv2d reduce_{nullptr};
};
TORCH_MODULE(EarlyFusion);

/// Bilinear (corner-aligned) resize of P3-P5 to P2, concatenation and 1x1 conv.
class PyramidFusionImpl : public torch::nn::Module {
 public:
  PyramidFusionImpl(int channels, double init_std);
  torch::Tensor forward(const torch::Tensor& p2, const torch::Tensor& p3, const torch::Tensor& p4,
                        const torch::Tensor& p5);
  torch::nn::Conv2d& reduce() { return reduce_; }

 private:
  torch::nn::Conv2d reduce_{nullptr};
};
TORCH_MODULE(PyramidFusion);

class BackboneImpl : public torch::nn::Module {
 public:
  explicit BackboneImpl(BackboneConfig cfg);

  const BackboneConfig& config() const { return cfg_; }

  /// image: 1 x 3 x H x W in [0, 1]; grid: 1 x d x h x w at the fusion stride,
  /// covering at least the unpadded image. Pads to multiples of 32.
  FeatureSet forward(const torch::Tensor& image, const std::optional<torch::Tensor>& grid);

  EarlyFusion& early_fusion() { return fusion_; }
  PyramidFusion& pyramid_fusion() { return pyramid_; }

 private:
  torch::Tensor run_stage(int stage, torch::Tensor x, const std::optional<torch::Tensor>& grid);

  BackboneConfig cfg_;
  torch::nn::Sequential stem_{nullptr};
  std::vector<std::vector<BasicBlock>> stages_;
  EarlyFusion fusion_{nullptr};
  std::vector<torch::nn::Conv2d> lateral_;
  std::vector<torch::nn::Conv2d> output_;
  PyramidFusion pyramid_{nullptr};
};
TORCH_MODULE(Backbone);

/// Free-function form of the early fusion step with its shape contract.
torch::Tensor early_fuse(EarlyFusion& fusion, const torch::Tensor& stage_features, const BertGrid& grid);

}  // namespace vbg
