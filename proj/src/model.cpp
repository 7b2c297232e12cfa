// SPDX-License-Identifier: Apache-2.0
#include "vibertgrid/model.hpp"

#include <algorithm>
#include <numeric>

#include "vibertgrid/errors.hpp"
#include "vibertgrid/sampler.hpp"

namespace vbg {

ModelConfig& ModelConfig::finalize() {
  backbone.grid_dim = encoder.hidden;
  head.embedding_dim = encoder.hidden;
  head.feature_channels = backbone.pyramid_channels();
  head.aux_channels = backbone.pyramid_channels();
  head.roi_features = use_cnn;
  validate();
  return *this;
}

void ModelConfig::validate() const {
  encoder.validate();
  if (head.num_fields < 1) throw ConfigError("model: at least one field is required");
  if (!use_cnn) return;
  backbone.validate();
  if (backbone.grid_dim != encoder.hidden) throw ConfigError("model: grid_dim must equal encoder hidden size");
  if (head.embedding_dim != encoder.hidden) throw ConfigError("model: head embedding_dim must equal encoder hidden size");
  if (head.feature_channels != backbone.pyramid_channels())
    throw ConfigError("model: head feature_channels must equal pyramid channels");
}

torch::Tensor image_tensor(const Image& image, torch::Dtype dtype) {
  auto t = torch::from_blob(const_cast<float*>(image.pixels.data()), {image.height, image.width, 3}, torch::kFloat32);
  return t.permute({2, 0, 1}).unsqueeze(0).to(dtype).contiguous();
}

ViBERTgridImpl::ViBERTgridImpl(ModelConfig cfg) : cfg_(cfg) {
  cfg_.validate();
  encoder_ = register_module("encoder", Encoder(cfg_.encoder));
  if (cfg_.use_cnn) backbone_ = register_module("backbone", Backbone(cfg_.backbone));
  word_head_ = register_module("word_head", WordHead(cfg_.head));
  if (cfg_.use_cnn) aux_head_ = register_module("aux_head", AuxHead(cfg_.head));
}

torch::Dtype ViBERTgridImpl::dtype() const {
  for (const auto& p : parameters()) return p.scalar_type();
  return torch::kFloat32;
}

WindowSplit select_gradient_windows(int window_count, int max_grad, std::mt19937_64& rng) {
  if (max_grad < 1) throw ConfigError("select_gradient_windows: L must be >= 1");
  std::vector<int> all(static_cast<std::size_t>(std::max(window_count, 0)));
  std::iota(all.begin(), all.end(), 0);
  WindowSplit split;
  split.grad = sample_without_replacement(all, max_grad, rng);
  std::sort(split.grad.begin(), split.grad.end());
  std::set_difference(all.begin(), all.end(), split.grad.begin(), split.grad.end(), std::back_inserter(split.no_grad));
  return split;
}

std::uint64_t parameter_checksum(torch::nn::Module& module) {
  std::uint64_t h = 1469598103934665603ULL;
  for (const auto& p : module.parameters()) {
    auto c = p.detach().contiguous().cpu();
    const auto* bytes = static_cast<const unsigned char*>(c.data_ptr());
    const auto n = static_cast<std::size_t>(c.numel()) * c.element_size();
    for (std::size_t i = 0; i < n; ++i) {
      h ^= bytes[i];
      h *= 1099511628211ULL;
    }
  }
  return h;
}

ForwardResult ViBERTgridImpl::forward(const Document& doc, const Vocab& vocab, const ForwardOptions& opts) {
  ForwardResult out;
  const auto dtype = this->dtype();
  const auto n = static_cast<std::int64_t>(doc.words.size());
  const bool need_text = !cfg_.use_cnn || cfg_.backbone.use_textual || cfg_.head.late_fusion;

  if (need_text && n > 0) {
    out.tokens = tokenize(doc.words, vocab);
    out.windows = slice_windows(out.tokens);
    const int count = static_cast<int>(out.windows.size());
    std::vector<bool> grad(static_cast<std::size_t>(count), true);
    if (opts.max_grad_windows > 0 && count > opts.max_grad_windows) {
      if (!opts.rng) throw ConfigError("forward: window subsampling requires an rng");
      auto split = select_gradient_windows(count, opts.max_grad_windows, *opts.rng);
      for (int w : split.no_grad) grad[static_cast<std::size_t>(w)] = false;
    }
    std::vector<torch::Tensor> emb;
    emb.reserve(out.windows.size());
    for (int w = 0; w < count; ++w) {
      if (grad[static_cast<std::size_t>(w)]) {
        out.grad_windows.push_back(w);
        emb.push_back(encoder_->encode_window(out.windows[static_cast<std::size_t>(w)]));
      } else {
        torch::NoGradGuard guard;
        emb.push_back(encoder_->encode_window(out.windows[static_cast<std::size_t>(w)]));
      }
    }
    out.embeddings = aggregate_word_embeddings(emb, out.windows, out.tokens);
  } else {
    out.embeddings = torch::zeros({n, cfg_.encoder.hidden}, torch::TensorOptions().dtype(dtype));
  }

  const auto options = torch::TensorOptions().dtype(dtype);
  if (!cfg_.use_cnn) {
    out.words = n > 0 ? word_head_->forward(torch::Tensor(), out.embeddings)
                      : WordPrediction{torch::zeros({0}, options), torch::zeros({0, cfg_.head.num_fields}, options)};
    return out;
  }

  std::optional<torch::Tensor> grid_input;
  if (cfg_.backbone.use_textual) {
    const int stride = cfg_.backbone.grid_stride();
    const int padded_h = (doc.height() + 31) / 32 * 32;
    const int padded_w = (doc.width() + 31) / 32 * 32;
    out.grid = rasterize_bertgrid(doc.words, out.embeddings, padded_h, padded_w, stride);
    grid_input = out.grid->nchw().to(dtype);
  }
  out.features = backbone_->forward(image_tensor(doc.image, dtype), grid_input);

  if (n > 0) {
    std::vector<Rect> rects;
    rects.reserve(doc.words.size());
    for (const auto& w : doc.words) rects.push_back(bounding_rect(w.quad));
    auto pooled = roi_align(out.features.p_fuse, rects, 0.25);
    out.words = word_head_->forward(pooled, out.embeddings);
  } else {
    out.words = WordPrediction{torch::zeros({0}, options), torch::zeros({0, cfg_.head.num_fields}, options)};
  }
  if (opts.compute_pixels) out.pixels = aux_head_->forward(out.features.p_fuse, doc.height(), doc.width());
  return out;
}

}  // namespace vbg
