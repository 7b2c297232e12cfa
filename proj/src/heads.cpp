// SPDX-License-Identifier: Apache-2.0
#include "vibertgrid/heads.hpp"

#include <cmath>

#include "vibertgrid/errors.hpp"

namespace vbg {

namespace F = torch::nn::functional;

torch::Tensor roi_align(const torch::Tensor& map, const std::vector<Rect>& rects, double spatial_scale,
                        int output_size, int sampling_ratio) {
  const torch::Tensor m = map.dim() == 4 ? map.squeeze(0) : map;
  if (m.dim() != 3) throw ShapeError("roi_align: map must be C x h x w");
  const auto channels = m.size(0);
  const auto h = m.size(1);
  const auto w = m.size(2);
  const auto n = static_cast<std::int64_t>(rects.size());
  if (n == 0) return torch::zeros({0, channels, output_size, output_size}, m.options());

  const int bins = output_size * output_size;
  const int per_bin = sampling_ratio * sampling_ratio * 4;
  const std::size_t total = static_cast<std::size_t>(n) * bins * per_bin;
  std::vector<std::int64_t> index(total, 0);
  std::vector<double> weight(total, 0.0);
  const double inv_count = 1.0 / (sampling_ratio * sampling_ratio);

  std::size_t k = 0;
  for (std::int64_t r = 0; r < n; ++r) {
    const Rect& rect = rects[r];
    const double x0 = rect.left * spatial_scale;
    const double y0 = rect.top * spatial_scale;
    double rw = (rect.right - rect.left) * spatial_scale;
    double rh = (rect.bottom - rect.top) * spatial_scale;
    if (rw < 1e-6 || rh < 1e-6) {
      warn("roi_align: degenerate rectangle " + std::to_string(r) + " expanded to 1e-6 map units");
      rw = std::max(rw, 1e-6);
      rh = std::max(rh, 1e-6);
    }
    const double bin_w = rw / output_size;
    const double bin_h = rh / output_size;
    for (int by = 0; by < output_size; ++by) {
      for (int bx = 0; bx < output_size; ++bx) {
        for (int iy = 0; iy < sampling_ratio; ++iy) {
          double y = y0 + by * bin_h + (iy + 0.5) * bin_h / sampling_ratio;
          for (int ix = 0; ix < sampling_ratio; ++ix, k += 4) {
            double x = x0 + bx * bin_w + (ix + 0.5) * bin_w / sampling_ratio;
            if (y < -1.0 || y > static_cast<double>(h) || x < -1.0 || x > static_cast<double>(w)) continue;
            double yy = std::max(y, 0.0);
            double xx = std::max(x, 0.0);
            auto y_low = static_cast<std::int64_t>(yy);
            auto x_low = static_cast<std::int64_t>(xx);
            std::int64_t y_high, x_high;
            if (y_low >= h - 1) {
              y_high = y_low = h - 1;
              yy = static_cast<double>(y_low);
            } else {
              y_high = y_low + 1;
            }
            if (x_low >= w - 1) {
              x_high = x_low = w - 1;
              xx = static_cast<double>(x_low);
            } else {
              x_high = x_low + 1;
            }
            const double ly = yy - y_low, lx = xx - x_low;
            const double hy = 1.0 - ly, hx = 1.0 - lx;
            index[k + 0] = y_low * w + x_low;
            index[k + 1] = y_low * w + x_high;
            index[k + 2] = y_high * w + x_low;
            index[k + 3] = y_high * w + x_high;
            weight[k + 0] = hy * hx * inv_count;
            weight[k + 1] = hy * lx * inv_count;
            weight[k + 2] = ly * hx * inv_count;
            weight[k + 3] = ly * lx * inv_count;
          }
        }
      }
    }
  }
  auto idx = torch::tensor(index, torch::kLong);
  auto wts = torch::tensor(weight, torch::kFloat64).to(m.dtype());
  auto gathered = m.reshape({channels, h * w}).index_select(1, idx) * wts;
  auto pooled = gathered.view({channels, n * bins, per_bin}).sum(2);
  return pooled.view({channels, n, output_size, output_size}).permute({1, 0, 2, 3}).contiguous();
}

namespace {

template <typename Layer>
void init_gaussian(Layer& layer, double std) {
  torch::NoGradGuard guard;
  layer->weight.normal_(0.0, std);
  layer->bias.zero_();
}

}  // namespace

WordHeadImpl::WordHeadImpl(const HeadConfig& cfg) : cfg_(cfg) {
  const int f = cfg.feature_channels;
  if (cfg.roi_features) {
    conv1_ = register_module("conv1", torch::nn::Conv2d(torch::nn::Conv2dOptions(f, f, 3).padding(1)));
    conv2_ = register_module("conv2", torch::nn::Conv2d(torch::nn::Conv2dOptions(f, f, 3).padding(1)));
    fc_roi_ = register_module("fc_roi", torch::nn::Linear(f * kRoiSize * kRoiSize, cfg.fc_dim));
    init_gaussian(conv1_, cfg.init_std);
    init_gaussian(conv2_, cfg.init_std);
    init_gaussian(fc_roi_, cfg.init_std);
  } else {
    fc_text_ = register_module("fc_text", torch::nn::Linear(cfg.embedding_dim, cfg.fc_dim));
    init_gaussian(fc_text_, cfg.init_std);
  }
  const bool concat = cfg.roi_features && cfg.late_fusion;
  fc_fuse_ = register_module("fc_fuse", torch::nn::Linear(cfg.fc_dim + (concat ? cfg.embedding_dim : 0), cfg.fc_dim));
  cls1_ = register_module("cls1", torch::nn::Linear(cfg.fc_dim, 1));
  cls2_ = register_module("cls2", torch::nn::Linear(cfg.fc_dim, cfg.num_fields));
  init_gaussian(fc_fuse_, cfg.init_std);
  init_gaussian(cls1_, cfg.init_std);
  init_gaussian(cls2_, cfg.init_std);
}

WordPrediction WordHeadImpl::forward(const torch::Tensor& pooled, const torch::Tensor& embeddings) {
  torch::Tensor x;
  if (cfg_.roi_features) {
    auto h = torch::relu(conv1_(pooled));
    h = torch::relu(conv2_(h));
    x = torch::relu(fc_roi_(h.flatten(1)));
    if (cfg_.late_fusion) x = torch::cat({x, embeddings.to(x.dtype())}, 1);
  } else {
    x = torch::relu(fc_text_(embeddings));
  }
  x = torch::relu(fc_fuse_(x));
  return WordPrediction{torch::sigmoid(cls1_(x)).squeeze(1), torch::sigmoid(cls2_(x))};
}

AuxHeadImpl::AuxHeadImpl(const HeadConfig& cfg) : cfg_(cfg) {
  const int f = cfg.feature_channels;
  const int a = cfg.aux_channels;
  conv1_ = register_module("conv1", torch::nn::Conv2d(torch::nn::Conv2dOptions(f, a, 3).padding(1)));
  conv2_ = register_module("conv2", torch::nn::Conv2d(torch::nn::Conv2dOptions(a, a, 3).padding(1)));
  cls1_ = register_module("cls1", torch::nn::Conv2d(torch::nn::Conv2dOptions(a, 3, 1)));
  cls2_ = register_module("cls2", torch::nn::Conv2d(torch::nn::Conv2dOptions(a, cfg.num_fields, 1)));
  for (auto* c : {&conv1_, &conv2_, &cls1_, &cls2_}) init_gaussian(*c, cfg.init_std);
}

torch::Tensor AuxHeadImpl::trunk(const torch::Tensor& p_fuse) {
  return torch::relu(conv2_(torch::relu(conv1_(p_fuse))));
}

namespace {

torch::Tensor upsample4(const torch::Tensor& x, int height, int width) {
  auto up = F::interpolate(x, F::InterpolateFuncOptions()
                                  .size(std::vector<int64_t>{4 * x.size(2), 4 * x.size(3)})
                                  .mode(torch::kBilinear)
                                  .align_corners(false));
  if (up.size(2) < height || up.size(3) < width) throw ShapeError("aux head: feature map smaller than image / 4");
  return up.slice(2, 0, height).slice(3, 0, width);
}

}  // namespace

PixelPrediction AuxHeadImpl::forward(const torch::Tensor& p_fuse, int height, int width) {
  auto t = trunk(p_fuse);
  auto s1 = upsample4(cls1_(t), height, width);
  auto s2 = upsample4(cls2_(t), height, width);
  return PixelPrediction{torch::softmax(s1, 1).squeeze(0), torch::sigmoid(s2).squeeze(0)};
}

PixelPrediction AuxHeadImpl::forward_upsample_first(const torch::Tensor& p_fuse, int height, int width) {
  auto t = upsample4(trunk(p_fuse), height, width);
  return PixelPrediction{torch::softmax(cls1_(t), 1).squeeze(0), torch::sigmoid(cls2_(t)).squeeze(0)};
}

torch::Tensor clamped_bce(const torch::Tensor& probs, const torch::Tensor& targets) {
  auto p = probs.clamp(kProbClamp, 1.0 - kProbClamp);
  auto y = targets.to(p.dtype());
  return -(y * torch::log(p) + (1.0 - y) * torch::log(1.0 - p));
}

namespace {

torch::Tensor index_tensor(const std::vector<int>& ids) {
  std::vector<std::int64_t> v(ids.begin(), ids.end());
  return torch::tensor(v, torch::kLong);
}

torch::Tensor target_matrix(const std::vector<std::vector<int>>& rows, std::int64_t cols) {
  std::vector<double> flat;
  flat.reserve(rows.size() * static_cast<std::size_t>(cols));
  for (const auto& r : rows) {
    if (static_cast<std::int64_t>(r.size()) != cols) throw ShapeError("loss: per-field target row has wrong size");
    flat.insert(flat.end(), r.begin(), r.end());
  }
  return torch::tensor(flat, torch::kFloat64).view({static_cast<std::int64_t>(rows.size()), cols});
}

torch::Tensor second_stage(const torch::Tensor& probs, const torch::Tensor& targets, SecondStageNorm norm) {
  const double n = static_cast<double>(probs.size(0));
  const double c = static_cast<double>(probs.size(1));
  auto sum = clamped_bce(probs, targets).sum();
  return norm == SecondStageNorm::kPerClassifier ? sum / (n * c) : sum / n;
}

std::vector<std::int64_t> flat_pixels(const std::vector<PixelCoord>& pixels, std::int64_t width) {
  std::vector<std::int64_t> out;
  out.reserve(pixels.size());
  for (const auto& p : pixels) out.push_back(static_cast<std::int64_t>(p.y) * width + p.x);
  return out;
}

}  // namespace

WordLosses loss_word(const WordPrediction& pred, const WordBatch1& batch1, const WordBatch2& batch2,
                     SecondStageNorm norm) {
  const auto zero = torch::zeros({}, pred.o1.options());
  WordLosses out;
  if (batch1.ids.empty()) {
    warn("loss_word: empty first-stage batch, L1 = 0");
    out.l1 = zero;
  } else {
    auto p = pred.o1.index_select(0, index_tensor(batch1.ids));
    std::vector<double> y(batch1.targets.begin(), batch1.targets.end());
    out.l1 = clamped_bce(p, torch::tensor(y, torch::kFloat64)).mean();
  }
  if (batch2.ids.empty()) {
    warn("loss_word: empty second-stage batch, L2 = 0");
    out.l2 = zero;
  } else {
    auto p = pred.o2.index_select(0, index_tensor(batch2.ids));
    out.l2 = second_stage(p, target_matrix(batch2.targets, p.size(1)), norm);
  }
  out.lc = out.l1 + out.l2;
  return out;
}

AuxLosses loss_aux(const PixelPrediction& pred, const PixelBatch1& batch1, const PixelBatch2& batch2,
                   SecondStageNorm norm) {
  const auto zero = torch::zeros({}, pred.x1.options());
  const auto width = pred.x1.size(2);
  AuxLosses out;
  if (batch1.pixels.empty()) {
    warn("loss_aux: empty first-stage pixel batch, LAUX-1 = 0");
    out.aux1 = zero;
  } else {
    auto idx = torch::tensor(flat_pixels(batch1.pixels, width), torch::kLong);
    auto scores = pred.x1.reshape({3, -1}).index_select(1, idx);  // 3 x n
    std::vector<std::int64_t> t(batch1.targets.begin(), batch1.targets.end());
    auto chosen = scores.gather(0, torch::tensor(t, torch::kLong).unsqueeze(0)).squeeze(0);
    out.aux1 = -torch::log(chosen.clamp(kProbClamp, 1.0 - kProbClamp)).mean();
  }
  if (batch2.pixels.empty()) {
    warn("loss_aux: empty second-stage pixel batch, LAUX-2 = 0");
    out.aux2 = zero;
  } else {
    const auto c = pred.x2.size(0);
    auto idx = torch::tensor(flat_pixels(batch2.pixels, width), torch::kLong);
    auto p = pred.x2.reshape({c, -1}).index_select(1, idx).transpose(0, 1);  // n x C
    out.aux2 = second_stage(p, target_matrix(batch2.targets, c), norm);
  }
  out.aux = out.aux1 + out.aux2;
  return out;
}

torch::Tensor total_loss(const torch::Tensor& lc, const torch::Tensor& laux, double lambda) {
  if (lambda < 0) throw ConfigError("total_loss: lambda must be >= 0");
  if (lambda == 0.0) return lc;
  return lc + lambda * laux;
}

std::vector<double> per_word_second_stage_loss(const WordPrediction& pred, const torch::Tensor& targets) {
  torch::NoGradGuard guard;
  auto l = clamped_bce(pred.o2.detach(), targets).sum(1).to(torch::kFloat64).contiguous();
  return std::vector<double>(l.data_ptr<double>(), l.data_ptr<double>() + l.numel());
}

}  // namespace vbg
