// SPDX-License-Identifier: Apache-2.0
//
// Word-level field classification head (ROIAlign pooling, late fusion, two
// stage classifiers), auxiliary pixel segmentation head, and their losses.
#pragma once

#include <vector>

#include <torch/torch.h>

#include "vibertgrid/geometry.hpp"

namespace vbg {

inline constexpr int kRoiSize = 7;
inline constexpr int kRoiSamples = 2;
inline constexpr double kProbClamp = 1e-7;

/// ROIAlign over a stride-`1/spatial_scale` map. `map` is 1 x C x h x w (or C x
/// h x w); rects are in image pixels. Returns N x C x 7 x 7. Differentiable
/// w.r.t. `map`.
torch::Tensor roi_align(const torch::Tensor& map, const std::vector<Rect>& rects, double spatial_scale = 0.25,
                        int output_size = kRoiSize, int sampling_ratio = kRoiSamples);

struct HeadConfig {
  int num_fields = 4;
  int feature_channels = 64;  // channels of P_fuse
  int embedding_dim = 256;    // E(w) size
  int fc_dim = 1024;
  bool roi_features = true;   // false: classify from E(w) only (no CNN)
  bool late_fusion = true;
  int aux_channels = 64;
  double init_std = 0.01;
};

struct WordPrediction {
  torch::Tensor o1;  // N
  torch::Tensor o2;  // N x C
};

class WordHeadImpl : public torch::nn::Module {
 public:
  explicit WordHeadImpl(const HeadConfig& cfg);

  /// pooled: N x F x 7 x 7 (ignored without roi_features); embeddings: N x d
  /// (ignored without late fusion unless roi_features is off).
  WordPrediction forward(const torch::Tensor& pooled, const torch::Tensor& embeddings);

  const HeadConfig& config() const { return cfg_; }

 private:
  HeadConfig cfg_;
  torch::nn::Conv2d conv1_{nullptr}, conv2_{nullptr};
  torch::nn::Linear fc_roi_{nullptr}, fc_text_{nullptr}, fc_fuse_{nullptr};
  torch::nn::Linear cls1_{nullptr}, cls2_{nullptr};
};
TORCH_MODULE(WordHead);

struct PixelPrediction {
  torch::Tensor x1;  // 3 x H x W softmax scores (categories 1, 2, 3)
  torch::Tensor x2;  // C x H x W sigmoid scores
};

class AuxHeadImpl : public torch::nn::Module {
 public:
  explicit AuxHeadImpl(const HeadConfig& cfg);

  /// p_fuse: 1 x F x h x w at stride 4; output cropped to height x width.
  PixelPrediction forward(const torch::Tensor& p_fuse, int height, int width);

  /// Reference path applying the 1x1 classifiers after upsampling the 3x3
  /// features. `forward` classifies at stride 4 and upsamples the scores,
  /// which is the same linear map.
  PixelPrediction forward_upsample_first(const torch::Tensor& p_fuse, int height, int width);

 private:
  torch::Tensor trunk(const torch::Tensor& p_fuse);

  HeadConfig cfg_;
  torch::nn::Conv2d conv1_{nullptr}, conv2_{nullptr};
  torch::nn::Conv2d cls1_{nullptr}, cls2_{nullptr};
};
TORCH_MODULE(AuxHead);

/// Sampled words with binary targets for the first classifier.
struct WordBatch1 {
  std::vector<int> ids;
  std::vector<int> targets;  // y1 in {0, 1}
};

/// Sampled words with per-field targets for the second classifier.
struct WordBatch2 {
  std::vector<int> ids;
  std::vector<std::vector<int>> targets;  // y2,k per id
};

struct PixelCoord {
  int x = 0;
  int y = 0;
  friend bool operator==(const PixelCoord&, const PixelCoord&) = default;
};

struct PixelBatch1 {
  std::vector<PixelCoord> pixels;
  std::vector<int> targets;  // category index 0, 1, 2 (= categories 1, 2, 3)
};

struct PixelBatch2 {
  std::vector<PixelCoord> pixels;
  std::vector<std::vector<int>> targets;  // y'2,k per pixel
};

enum class SecondStageNorm {
  kPerClassifier,  // divide by N2 * C
  kLiteral,        // divide by N2, summing over fields
};

struct WordLosses {
  torch::Tensor l1, l2, lc;
};

struct AuxLosses {
  torch::Tensor aux1, aux2, aux;
};

/// Binary cross-entropy on clamped probabilities, elementwise.
torch::Tensor clamped_bce(const torch::Tensor& probs, const torch::Tensor& targets);

WordLosses loss_word(const WordPrediction& pred, const WordBatch1& batch1, const WordBatch2& batch2,
                     SecondStageNorm norm = SecondStageNorm::kPerClassifier);

AuxLosses loss_aux(const PixelPrediction& pred, const PixelBatch1& batch1, const PixelBatch2& batch2,
                   SecondStageNorm norm = SecondStageNorm::kPerClassifier);

torch::Tensor total_loss(const torch::Tensor& lc, const torch::Tensor& laux, double lambda);

/// Per-word sum over fields of the second-stage BCE (no gradient), used to rank
/// hard examples. targets: N x C.
std::vector<double> per_word_second_stage_loss(const WordPrediction& pred, const torch::Tensor& targets);

}  // namespace vbg
