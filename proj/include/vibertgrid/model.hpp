// SPDX-License-Identifier: Apache-2.0
//
// Full document model: encoder -> word embeddings -> text grid -> backbone with
// early fusion -> word head and auxiliary pixel head.
#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "vibertgrid/backbone.hpp"
#include "vibertgrid/docmodel.hpp"
#include "vibertgrid/encoder.hpp"
#include "vibertgrid/heads.hpp"
#include "vibertgrid/textgrid.hpp"

namespace vbg {

struct ModelConfig {
  EncoderConfig encoder;
  BackboneConfig backbone;
  HeadConfig head;
  /// false: classify from E(w) alone with no CNN or grid.
  bool use_cnn = true;

  /// Derives dependent sizes (grid_dim, embedding_dim, feature channels) and
  /// validates the result.
  ModelConfig& finalize();
  void validate() const;
};

/// 1 x 3 x H x W tensor in [0, 1].
torch::Tensor image_tensor(const Image& image, torch::Dtype dtype = torch::kFloat32);

struct ForwardOptions {
  /// Windows encoded with gradient recording (the rest run without). 0 keeps
  /// every window gradient-carrying.
  int max_grad_windows = 0;
  std::mt19937_64* rng = nullptr;
  bool compute_pixels = false;
};

struct ForwardResult {
  TokenizedDocument tokens;
  std::vector<Window> windows;
  std::vector<int> grad_windows;
  torch::Tensor embeddings;  // N x d
  std::optional<BertGrid> grid;
  FeatureSet features;
  WordPrediction words;
  std::optional<PixelPrediction> pixels;
};

class ViBERTgridImpl : public torch::nn::Module {
 public:
  explicit ViBERTgridImpl(ModelConfig cfg);

  const ModelConfig& config() const { return cfg_; }
  Encoder& encoder() { return encoder_; }
  Backbone& backbone() { return backbone_; }
  WordHead& word_head() { return word_head_; }
  AuxHead& aux_head() { return aux_head_; }
  bool has_backbone() const { return !backbone_.is_empty(); }

  ForwardResult forward(const Document& doc, const Vocab& vocab, const ForwardOptions& opts = {});

  torch::Dtype dtype() const;

 private:
  ModelConfig cfg_;
  Encoder encoder_{nullptr};
  Backbone backbone_{nullptr};
  WordHead word_head_{nullptr};
  AuxHead aux_head_{nullptr};
};
TORCH_MODULE(ViBERTgrid);

struct WindowSplit {
  std::vector<int> grad;     // sorted
  std::vector<int> no_grad;  // sorted
};

/// Uniform choice of min(L, count) gradient-carrying windows.
WindowSplit select_gradient_windows(int window_count, int max_grad, std::mt19937_64& rng);

/// FNV-1a hash over the raw bytes of every parameter (registration order).
std::uint64_t parameter_checksum(torch::nn::Module& module);

}  // namespace vbg
