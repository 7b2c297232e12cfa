// SPDX-License-Identifier: Apache-2.0
//
// Small BERT-style transformer encoder producing contextual token embeddings
// for each 512-token window.
#pragma once

#include <vector>

#include <torch/torch.h>

#include "vibertgrid/textgrid.hpp"

namespace vbg {

struct EncoderConfig {
  int layers = 4;
  int heads = 4;
  int hidden = 256;
  int ffn_dim = 1024;
  int max_positions = kWindowLength;
  int vocab_size = kNumSpecialTokens + 256;
  double dropout = 0.1;
  bool frozen = false;
  double init_std = 0.02;

  void validate() const;
};

/// Post-layer-norm transformer block: self-attention with PAD masking,
/// residual + LayerNorm, GELU feed-forward, residual + LayerNorm.
class EncoderLayerImpl : public torch::nn::Module {
 public:
  EncoderLayerImpl(const EncoderConfig& cfg);

  /// x: B x L x d, key_mask: B x L (true = attend). Optionally returns the
  /// B x heads x L x L attention probabilities.
  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& key_mask,
                        torch::Tensor* attention = nullptr);

 private:
  int heads_;
  double dropout_;
  torch::nn::Linear query_{nullptr}, key_{nullptr}, value_{nullptr}, attn_out_{nullptr};
  torch::nn::LayerNorm attn_norm_{nullptr};
  torch::nn::Linear ffn_in_{nullptr}, ffn_out_{nullptr};
  torch::nn::LayerNorm ffn_norm_{nullptr};
};
TORCH_MODULE(EncoderLayer);

class EncoderImpl : public torch::nn::Module {
 public:
  explicit EncoderImpl(EncoderConfig cfg);

  const EncoderConfig& config() const { return cfg_; }
  bool frozen() const { return cfg_.frozen; }
  void set_frozen(bool frozen);

  /// ids, mask: B x L. Returns B x L x hidden.
  torch::Tensor forward(const torch::Tensor& ids, const torch::Tensor& mask,
                        std::vector<torch::Tensor>* attention = nullptr);

  /// Encodes each window. With `trim_padding` only the CLS..SEP prefix is run
  /// through the stack (PAD never influences real positions), so each result
  /// has real_count + 2 rows; otherwise all 512 rows are returned.
  std::vector<torch::Tensor> encode_windows(const std::vector<Window>& windows, bool trim_padding = true);

  /// Encodes a single window (see encode_windows).
  torch::Tensor encode_window(const Window& window, bool trim_padding = true);

 private:
  EncoderConfig cfg_;
  torch::nn::Embedding token_embedding_{nullptr};
  torch::nn::Embedding position_embedding_{nullptr};
  torch::nn::LayerNorm embedding_norm_{nullptr};
  torch::nn::ModuleList layers_{nullptr};
  std::vector<EncoderLayer> layer_refs_;
};
TORCH_MODULE(Encoder);

/// Marks the encoder frozen: training leaves its parameters untouched and no
/// gradients are recorded for it.
Encoder freeze(Encoder encoder);

}  // namespace vbg
