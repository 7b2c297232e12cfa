// SPDX-License-Identifier: Apache-2.0
#include "vibertgrid/encoder.hpp"

#include <cmath>

#include "vibertgrid/errors.hpp"

namespace vbg {

void EncoderConfig::validate() const {
  if (layers < 0) throw ConfigError("encoder: layers must be >= 0");
  if (heads < 1 || hidden < 1 || hidden % heads != 0)
    throw ConfigError("encoder: hidden must be divisible by heads");
  if (ffn_dim < hidden) throw ConfigError("encoder: ffn_dim must be >= hidden");
  if (max_positions < 1 || max_positions > kWindowLength)
    throw ConfigError("encoder: max_positions must lie in [1, 512]");
  if (vocab_size <= kNumSpecialTokens) throw ConfigError("encoder: vocab_size too small");
  if (dropout < 0 || dropout >= 1) throw ConfigError("encoder: dropout must lie in [0, 1)");
}

namespace {

void init_linear(torch::nn::Linear& l, double std) {
  torch::NoGradGuard guard;
  l->weight.normal_(0.0, std);
  l->bias.zero_();
}

}  // namespace

EncoderLayerImpl::EncoderLayerImpl(const EncoderConfig& cfg) : heads_(cfg.heads), dropout_(cfg.dropout) {
  query_ = register_module("query", torch::nn::Linear(cfg.hidden, cfg.hidden));
  key_ = register_module("key", torch::nn::Linear(cfg.hidden, cfg.hidden));
  value_ = register_module("value", torch::nn::Linear(cfg.hidden, cfg.hidden));
  attn_out_ = register_module("attn_out", torch::nn::Linear(cfg.hidden, cfg.hidden));
  attn_norm_ = register_module("attn_norm", torch::nn::LayerNorm(torch::nn::LayerNormOptions({cfg.hidden}).eps(1e-12)));
  ffn_in_ = register_module("ffn_in", torch::nn::Linear(cfg.hidden, cfg.ffn_dim));
  ffn_out_ = register_module("ffn_out", torch::nn::Linear(cfg.ffn_dim, cfg.hidden));
  ffn_norm_ = register_module("ffn_norm", torch::nn::LayerNorm(torch::nn::LayerNormOptions({cfg.hidden}).eps(1e-12)));
  for (auto* l : {&query_, &key_, &value_, &attn_out_, &ffn_in_, &ffn_out_}) init_linear(*l, cfg.init_std);
}

torch::Tensor EncoderLayerImpl::forward(const torch::Tensor& x, const torch::Tensor& key_mask,
                                        torch::Tensor* attention) {
  const auto b = x.size(0);
  const auto l = x.size(1);
  const auto d = x.size(2);
  const auto dh = d / heads_;
  auto split = [&](const torch::Tensor& t) { return t.view({b, l, heads_, dh}).transpose(1, 2); };
  auto q = split(query_(x));
  auto k = split(key_(x));
  auto v = split(value_(x));
  auto scores = torch::matmul(q, k.transpose(-2, -1)) / std::sqrt(static_cast<double>(dh));
  auto blocked = key_mask.logical_not().view({b, 1, 1, l});
  scores = scores.masked_fill(blocked, -std::numeric_limits<double>::infinity());
  auto probs = torch::softmax(scores, -1);
  if (attention) *attention = probs;
  probs = torch::dropout(probs, dropout_, is_training());
  auto context = torch::matmul(probs, v).transpose(1, 2).contiguous().view({b, l, d});
  auto h = attn_norm_(x + torch::dropout(attn_out_(context), dropout_, is_training()));
  auto f = ffn_out_(torch::gelu(ffn_in_(h)));
  return ffn_norm_(h + torch::dropout(f, dropout_, is_training()));
}

EncoderImpl::EncoderImpl(EncoderConfig cfg) : cfg_(cfg) {
  cfg_.validate();
  token_embedding_ = register_module("token_embedding", torch::nn::Embedding(cfg_.vocab_size, cfg_.hidden));
  position_embedding_ = register_module("position_embedding", torch::nn::Embedding(cfg_.max_positions, cfg_.hidden));
  embedding_norm_ = register_module("embedding_norm",
                                    torch::nn::LayerNorm(torch::nn::LayerNormOptions({cfg_.hidden}).eps(1e-12)));
  layers_ = register_module("layers", torch::nn::ModuleList());
  for (int i = 0; i < cfg_.layers; ++i) {
    layer_refs_.emplace_back(cfg_);
    layers_->push_back(layer_refs_.back());
  }
  torch::NoGradGuard guard;
  token_embedding_->weight.normal_(0.0, cfg_.init_std);
  position_embedding_->weight.normal_(0.0, cfg_.init_std);
  if (cfg_.frozen) set_frozen(true);
}

void EncoderImpl::set_frozen(bool frozen) {
  cfg_.frozen = frozen;
  for (auto& p : parameters()) p.requires_grad_(!frozen);
}

torch::Tensor EncoderImpl::forward(const torch::Tensor& ids, const torch::Tensor& mask,
                                   std::vector<torch::Tensor>* attention) {
  if (ids.dim() != 2) throw ShapeError("encoder: ids must be B x L");
  const auto l = ids.size(1);
  if (l > cfg_.max_positions) throw ShapeError("encoder: sequence longer than max_positions");
  if (ids.numel() > 0) {
    const auto lo = ids.min().item<std::int64_t>();
    const auto hi = ids.max().item<std::int64_t>();
    if (lo < 0 || hi >= cfg_.vocab_size)
      throw VocabError("encoder: token id " + std::to_string(lo < 0 ? lo : hi) + " outside vocab of size " +
                       std::to_string(cfg_.vocab_size));
  }
  auto positions = torch::arange(l, torch::kLong).unsqueeze(0);
  auto x = embedding_norm_(token_embedding_(ids) + position_embedding_(positions));
  x = torch::dropout(x, cfg_.dropout, is_training());
  if (attention) attention->clear();
  for (std::size_t i = 0; i < layer_refs_.size(); ++i) {
    torch::Tensor probs;
    x = layer_refs_[i]->forward(x, mask, attention ? &probs : nullptr);
    if (attention) attention->push_back(probs);
    if (!torch::isfinite(x).all().item<bool>())
      throw NumericError("encoder: non-finite activation in layer " + std::to_string(i));
  }
  return x;
}

torch::Tensor EncoderImpl::encode_window(const Window& window, bool trim_padding) {
  const int len = trim_padding ? window.real_count + 2 : kWindowLength;
  std::vector<std::int64_t> ids(window.token_ids.begin(), window.token_ids.begin() + len);
  std::vector<std::uint8_t> mask(window.attention_mask.begin(), window.attention_mask.begin() + len);
  auto id_t = torch::tensor(ids, torch::kLong).unsqueeze(0);
  auto mask_t = torch::tensor(mask, torch::kUInt8).to(torch::kBool).unsqueeze(0);
  return forward(id_t, mask_t).squeeze(0);
}

std::vector<torch::Tensor> EncoderImpl::encode_windows(const std::vector<Window>& windows, bool trim_padding) {
  std::vector<torch::Tensor> out;
  out.reserve(windows.size());
  for (const auto& w : windows) out.push_back(encode_window(w, trim_padding));
  return out;
}

Encoder freeze(Encoder encoder) {
  encoder->set_frozen(true);
  return encoder;
}

}  // namespace vbg
