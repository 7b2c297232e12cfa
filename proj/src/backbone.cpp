// SPDX-License-Identifier: Apache-2.0
#include "vibertgrid/backbone.hpp"

#include <cmath>

#include "vibertgrid/errors.hpp"

namespace vbg {

namespace F = torch::nn::functional;

std::string to_string(FusionStage s) {
  switch (s) {
    case FusionStage::kC2: return "C2";
    case FusionStage::kC3: return "C3";
    case FusionStage::kC4: return "C4";
    case FusionStage::kNone: return "none";
  }
  return "none";
}

FusionStage parse_fusion_stage(const std::string& s) {
  if (s == "C2" || s == "c2") return FusionStage::kC2;
  if (s == "C3" || s == "c3") return FusionStage::kC3;
  if (s == "C4" || s == "c4") return FusionStage::kC4;
  if (s == "none") return FusionStage::kNone;
  throw ConfigError("unknown fusion stage '" + s + "' (expected C2, C3, C4 or none)");
}

int fusion_stride(FusionStage s) {
  switch (s) {
    case FusionStage::kC2: return 4;
    case FusionStage::kC3: return 8;
    case FusionStage::kC4: return 16;
    case FusionStage::kNone: return 0;
  }
  return 0;
}

void BackboneConfig::validate() const {
  if (!use_visual && !use_textual) throw ConfigError("backbone: at least one of visual/textual input is required");
  if ((fusion_stage == FusionStage::kNone) != !use_textual)
    throw ConfigError("backbone: fusion_stage must be none exactly when textual input is disabled");
  if (width_multiplier <= 0) throw ConfigError("backbone: width_multiplier must be positive");
  if (use_textual && grid_dim < 1) throw ConfigError("backbone: grid_dim must be positive");
}

int BackboneConfig::channels(int full_width) const {
  return std::max(1, static_cast<int>(std::lround(full_width * width_multiplier)));
}

torch::Tensor pad_to_multiple(const torch::Tensor& x, int multiple) {
  const auto h = x.size(2);
  const auto w = x.size(3);
  const auto ph = (multiple - h % multiple) % multiple;
  const auto pw = (multiple - w % multiple) % multiple;
  if (ph == 0 && pw == 0) return x;
  return F::pad(x, F::PadFuncOptions({0, pw, 0, ph}));
}

namespace {

void init_gaussian(torch::nn::Conv2d& conv, double std) {
  torch::NoGradGuard guard;
  conv->weight.normal_(0.0, std);
  if (conv->bias.defined()) conv->bias.zero_();
}

}  // namespace

ConvBnImpl::ConvBnImpl(int in, int out, int kernel, int stride, bool relu) : relu_(relu) {
  conv_ = register_module(
      "conv", torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, kernel).stride(stride).padding(kernel / 2).bias(false)));
  bn_ = register_module("bn", torch::nn::BatchNorm2d(out));
  torch::nn::init::kaiming_normal_(conv_->weight, 0.0, torch::kFanOut, torch::kReLU);
}

torch::Tensor ConvBnImpl::forward(const torch::Tensor& x) {
  auto y = bn_(conv_(x));
  return relu_ ? torch::relu(y) : y;
}

BasicBlockImpl::BasicBlockImpl(int in, int out, int stride) : stride_(stride) {
  conv1_ = register_module("conv1", ConvBn(in, out, 3, stride, true));
  conv2_ = register_module("conv2", ConvBn(out, out, 3, 1, false));
  if (stride != 1 || in != out) shortcut_ = register_module("shortcut", ConvBn(in, out, 1, 1, false));
}

torch::Tensor BasicBlockImpl::forward(const torch::Tensor& x) {
  auto y = conv2_(conv1_(x));
  torch::Tensor identity = x;
  if (shortcut_) {
    if (stride_ != 1)
      identity = F::avg_pool2d(identity, F::AvgPool2dFuncOptions(stride_).stride(stride_).ceil_mode(true).count_include_pad(false));
    identity = shortcut_(identity);
  }
  return torch::relu(y + identity);
}

EarlyFusionImpl::EarlyFusionImpl(int stage_channels, int grid_channels, double init_std)
    : stage_channels_(stage_channels) {
  reduce_ = register_module("reduce", torch::nn::Conv2d(torch::nn::Conv2dOptions(stage_channels + grid_channels, stage_channels, 1)));
  init_gaussian(reduce_, init_std);
}

torch::Tensor EarlyFusionImpl::forward(const torch::Tensor& stage_features, const torch::Tensor& grid_nchw) {
  if (stage_features.size(2) != grid_nchw.size(2) || stage_features.size(3) != grid_nchw.size(3))
    throw ShapeError("early fusion: stage features " + c10::str(stage_features.sizes()) + " vs grid " +
                     c10::str(grid_nchw.sizes()));
  return reduce_(torch::cat({stage_features, grid_nchw.to(stage_features.dtype())}, 1));
}

void EarlyFusionImpl::init_identity() {
  torch::NoGradGuard guard;
  reduce_->weight.zero_();
  reduce_->bias.zero_();
  for (int c = 0; c < stage_channels_; ++c) reduce_->weight[c][c][0][0] = 1.0;
}

PyramidFusionImpl::PyramidFusionImpl(int channels, double init_std) {
  reduce_ = register_module("reduce", torch::nn::Conv2d(torch::nn::Conv2dOptions(4 * channels, channels, 1)));
  init_gaussian(reduce_, init_std);
}

torch::Tensor PyramidFusionImpl::forward(const torch::Tensor& p2, const torch::Tensor& p3, const torch::Tensor& p4,
                                         const torch::Tensor& p5) {
  const std::vector<int64_t> size{p2.size(2), p2.size(3)};
  auto up = [&](const torch::Tensor& p) {
    return F::interpolate(p, F::InterpolateFuncOptions().size(size).mode(torch::kBilinear).align_corners(true));
  };
  return reduce_(torch::cat({p2, up(p3), up(p4), up(p5)}, 1));
}

torch::Tensor early_fuse(EarlyFusion& fusion, const torch::Tensor& stage_features, const BertGrid& grid) {
  return fusion->forward(stage_features, grid.nchw());
}

BackboneImpl::BackboneImpl(BackboneConfig cfg) : cfg_(cfg) {
  cfg_.validate();
  const int stem = cfg_.channels(64);
  const int stem_half = cfg_.channels(32);
  stem_ = register_module("stem", torch::nn::Sequential(ConvBn(3, stem_half, 3, 2, true), ConvBn(stem_half, stem_half, 3, 1, true),
                                                        ConvBn(stem_half, stem, 3, 1, true)));
  const int widths[4] = {cfg_.channels(64), cfg_.channels(128), cfg_.channels(256), cfg_.channels(512)};
  int in = stem;
  for (int s = 0; s < 4; ++s) {
    std::vector<BasicBlock> blocks;
    for (int b = 0; b < 2; ++b) {
      const int stride = (s > 0 && b == 0) ? 2 : 1;
      blocks.push_back(register_module("stage" + std::to_string(s + 2) + "_" + std::to_string(b + 1),
                                       BasicBlock(in, widths[s], stride)));
      in = widths[s];
    }
    stages_.push_back(std::move(blocks));
  }
  if (cfg_.use_textual) {
    const int stage = static_cast<int>(cfg_.fusion_stage);
    fusion_ = register_module("early_fusion", EarlyFusion(widths[stage], cfg_.grid_dim, cfg_.new_layer_std));
  }
  const int fpn = cfg_.pyramid_channels();
  for (int s = 0; s < 4; ++s) {
    auto lat = register_module("fpn_lateral" + std::to_string(s + 2), torch::nn::Conv2d(torch::nn::Conv2dOptions(widths[s], fpn, 1)));
    auto out = register_module("fpn_output" + std::to_string(s + 2),
                               torch::nn::Conv2d(torch::nn::Conv2dOptions(fpn, fpn, 3).padding(1)));
    for (auto* c : {&lat, &out}) {
      torch::nn::init::kaiming_uniform_((*c)->weight, 1.0);
      torch::NoGradGuard guard;
      (*c)->bias.zero_();
    }
    lateral_.push_back(lat);
    output_.push_back(out);
  }
  pyramid_ = register_module("pyramid_fusion", PyramidFusion(fpn, cfg_.new_layer_std));
}

torch::Tensor BackboneImpl::run_stage(int stage, torch::Tensor x, const std::optional<torch::Tensor>& grid) {
  auto& blocks = stages_[stage];
  x = blocks[0]->forward(x);
  if (cfg_.use_textual && static_cast<int>(cfg_.fusion_stage) == stage) {
    if (!grid) throw ShapeError("backbone: textual input enabled but no grid supplied");
    auto g = *grid;
    const auto dh = x.size(2) - g.size(2);
    const auto dw = x.size(3) - g.size(3);
    if (dh < 0 || dw < 0)
      throw ShapeError("early fusion: grid " + c10::str(g.sizes()) + " larger than stage features " + c10::str(x.sizes()));
    if (dh > 0 || dw > 0) g = F::pad(g, F::PadFuncOptions({0, dw, 0, dh}));
    x = fusion_->forward(x, g);
  }
  for (std::size_t b = 1; b < blocks.size(); ++b) x = blocks[b]->forward(x);
  return x;
}

FeatureSet BackboneImpl::forward(const torch::Tensor& image, const std::optional<torch::Tensor>& grid) {
  if (image.dim() != 4 || image.size(1) != 3) throw ShapeError("backbone: image must be 1 x 3 x H x W");
  torch::Tensor x = cfg_.use_visual ? image : torch::zeros_like(image);
  x = pad_to_multiple(x, 32);
  x = stem_->forward(x);
  x = F::max_pool2d(x, F::MaxPool2dFuncOptions(3).stride(2).padding(1));
  std::vector<torch::Tensor> c(4);
  for (int s = 0; s < 4; ++s) {
    x = run_stage(s, x, grid);
    c[s] = x;
  }
  std::vector<torch::Tensor> p(4);
  p[3] = lateral_[3](c[3]);
  for (int s = 2; s >= 0; --s) {
    auto up = F::interpolate(p[s + 1], F::InterpolateFuncOptions()
                                           .size(std::vector<int64_t>{c[s].size(2), c[s].size(3)})
                                           .mode(torch::kNearest));
    p[s] = lateral_[s](c[s]) + up;
  }
  for (int s = 0; s < 4; ++s) p[s] = output_[s](p[s]);
  FeatureSet fs{p[0], p[1], p[2], p[3], pyramid_(p[0], p[1], p[2], p[3])};
  if (!torch::isfinite(fs.p_fuse).all().item<bool>())
    throw NumericError("backbone: non-finite values in fused feature map (check weights)");
  return fs;
}

}  // namespace vbg
