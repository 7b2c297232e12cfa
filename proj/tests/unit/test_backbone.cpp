// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include "test_support.hpp"
#include "vibertgrid/backbone.hpp"
#include "vibertgrid/errors.hpp"

using namespace vbg;
using torch::indexing::Slice;

namespace {

BackboneConfig small_backbone(int grid_dim = 8) {
  BackboneConfig c;
  c.width_multiplier = 0.0625;
  c.grid_dim = grid_dim;
  return c;
}

torch::Tensor grid_for(const BackboneConfig& c, int h, int w, double fill = 0.0) {
  const int s = c.grid_stride();
  return torch::full({1, c.grid_dim, (h + s - 1) / s, (w + s - 1) / s}, fill);
}

}  // namespace

TEST(BackboneConfig, FlagsMustAgree) {
  auto c = small_backbone();
  c.use_textual = false;
  EXPECT_THROW(c.validate(), ConfigError);
  c.fusion_stage = FusionStage::kNone;
  c.validate();
  c.use_visual = false;
  EXPECT_THROW(c.validate(), ConfigError);
  EXPECT_EQ(parse_fusion_stage("c4"), FusionStage::kC4);
  EXPECT_EQ(fusion_stride(FusionStage::kC2), 4);
  EXPECT_EQ(fusion_stride(FusionStage::kC3), 8);
  EXPECT_EQ(fusion_stride(FusionStage::kC4), 16);
}

TEST(Backbone, PyramidShapesAt512And500) {
  torch::manual_seed(0);
  auto cfg = small_backbone();
  Backbone bb(cfg);
  bb->eval();
  torch::NoGradGuard guard;
  for (int size : {512, 500}) {
    auto fs = bb->forward(torch::rand({1, 3, size, size}), grid_for(cfg, size, size));
    EXPECT_EQ(fs.p2.sizes(), (std::vector<std::int64_t>{1, 16, 128, 128}));
    EXPECT_EQ(fs.p3.sizes(), (std::vector<std::int64_t>{1, 16, 64, 64}));
    EXPECT_EQ(fs.p4.sizes(), (std::vector<std::int64_t>{1, 16, 32, 32}));
    EXPECT_EQ(fs.p5.sizes(), (std::vector<std::int64_t>{1, 16, 16, 16}));
    EXPECT_EQ(fs.p_fuse.sizes(), (std::vector<std::int64_t>{1, 16, 128, 128}));
  }
}

TEST(Backbone, ShapeLawForOddSizes) {
  torch::manual_seed(1);
  auto cfg = small_backbone();
  Backbone bb(cfg);
  bb->eval();
  torch::NoGradGuard guard;
  for (auto [h, w] : std::vector<std::pair<int, int>>{{33, 70}, {64, 64}, {97, 41}}) {
    auto fs = bb->forward(torch::rand({1, 3, h, w}), grid_for(cfg, h, w));
    const int ph = (h + 31) / 32 * 32, pw = (w + 31) / 32 * 32;
    EXPECT_EQ(fs.p2.size(2), ph / 4);
    EXPECT_EQ(fs.p3.size(3), pw / 8);
    EXPECT_EQ(fs.p5.size(2), ph / 32);
    EXPECT_EQ(fs.p5.size(3), pw / 32);
  }
}

TEST(EarlyFusion, ZeroGridWithIdentityInitPassesFeatures) {
  EarlyFusion f(64, 256, 0.01);
  f->init_identity();
  auto stage = torch::randn({1, 64, 16, 16});
  BertGrid g{torch::zeros({16, 16, 256}), 8};
  auto out = early_fuse(f, stage, g);
  EXPECT_EQ(out.sizes(), (std::vector<std::int64_t>{1, 64, 16, 16}));
  EXPECT_TRUE(torch::allclose(out, stage, 1e-6, 1e-6));
  BertGrid wrong{torch::zeros({8, 16, 256}), 8};
  EXPECT_THROW(early_fuse(f, stage, wrong), ShapeError);
}

TEST(Backbone, NoTextualBypassesFusion) {
  auto cfg = small_backbone();
  cfg.use_textual = false;
  cfg.fusion_stage = FusionStage::kNone;
  Backbone bb(cfg);
  EXPECT_TRUE(bb->early_fusion().is_empty());
  bb->eval();
  torch::NoGradGuard guard;
  auto fs = bb->forward(torch::rand({1, 3, 64, 64}), std::nullopt);
  EXPECT_EQ(fs.p_fuse.size(2), 16);
}

TEST(Backbone, VisualKnockoutIgnoresImage) {
  torch::manual_seed(2);
  auto cfg = small_backbone();
  cfg.use_visual = false;
  Backbone bb(cfg);
  bb->eval();
  torch::NoGradGuard guard;
  auto grid = torch::randn({1, 8, 8, 8});
  auto a = bb->forward(torch::rand({1, 3, 64, 64}), grid).p_fuse;
  auto b = bb->forward(torch::rand({1, 3, 64, 64}), grid).p_fuse;
  EXPECT_TRUE(torch::equal(a, b));
  auto c = bb->forward(torch::rand({1, 3, 64, 64}), torch::randn({1, 8, 8, 8})).p_fuse;
  EXPECT_FALSE(torch::equal(a, c));
}

TEST(Backbone, TextualKnockoutIsFunctionOfImage) {
  torch::manual_seed(3);
  auto cfg = small_backbone();
  cfg.use_textual = false;
  cfg.fusion_stage = FusionStage::kNone;
  Backbone bb(cfg);
  bb->eval();
  torch::NoGradGuard guard;
  auto image = torch::rand({1, 3, 64, 64});
  auto a = bb->forward(image, torch::randn({1, 8, 8, 8})).p_fuse;
  auto b = bb->forward(image, torch::randn({1, 8, 8, 8})).p_fuse;
  EXPECT_TRUE(torch::equal(a, b));
}

TEST(PyramidFusion, ConstantMapsWithAveragingKernel) {
  const int f = 4;
  PyramidFusion pf(f, 0.01);
  {
    torch::NoGradGuard guard;
    pf->reduce()->weight.zero_();
    pf->reduce()->bias.zero_();
    for (int c = 0; c < f; ++c)
      for (int j = 0; j < 4; ++j) pf->reduce()->weight[c][j * f + c][0][0] = 0.25;
  }
  torch::NoGradGuard guard;
  auto out = pf->forward(torch::full({1, f, 32, 32}, 1.5), torch::full({1, f, 16, 16}, 1.5),
                         torch::full({1, f, 8, 8}, 1.5), torch::full({1, f, 4, 4}, 1.5));
  EXPECT_EQ(out.sizes(), (std::vector<std::int64_t>{1, f, 32, 32}));
  EXPECT_LE((out - 1.5).abs().max().item<double>(), 1e-6);
}

TEST(PyramidFusion, CornerAlignedRampResize) {
  const int f = 1;
  PyramidFusion pf(f, 0.01);
  {
    torch::NoGradGuard guard;
    pf->reduce()->weight.zero_();
    pf->reduce()->bias.zero_();
    pf->reduce()->weight[0][3][0][0] = 1.0;  // pass P5 through
  }
  torch::NoGradGuard guard;
  auto ramp = torch::arange(16, torch::kFloat64).view({1, 1, 1, 16}).expand({1, 1, 16, 16}).contiguous();
  pf->to(torch::kFloat64);
  auto zeros = [](int s) { return torch::zeros({1, 1, s, s}, torch::kFloat64); };
  auto out = pf->forward(zeros(128), zeros(64), zeros(32), ramp);
  for (int x = 0; x < 128; x += 9) {
    const double expect = x * 15.0 / 127.0;
    EXPECT_NEAR(out[0][0][50][x].item<double>(), expect, 1e-9);
  }
}

TEST(Backbone, GridGradientMatchesFiniteDifference) {
  torch::manual_seed(4);
  auto cfg = small_backbone(4);
  Backbone bb(cfg);
  bb->to(torch::kFloat64);
  bb->eval();
  auto image = torch::rand({1, 3, 64, 64}, torch::kFloat64);
  auto grid = torch::randn({1, 4, 8, 8}, torch::kFloat64).requires_grad_(true);
  bb->forward(image, grid).p_fuse.sum().backward();
  auto g = grid.grad().clone();
  torch::NoGradGuard guard;
  int checked = 0;
  for (int i = 0; i < 6; ++i) {
    const int c = i % 4, y = (3 * i) % 8, x = (5 * i + 1) % 8;
    const double analytic = g[0][c][y][x].item<double>();
    auto eval_at = [&](double delta) {
      auto gg = grid.detach().clone();
      gg[0][c][y][x] += delta;
      return bb->forward(image, gg).p_fuse.sum().item<double>();
    };
    const double h = 1e-5;
    const double numeric = (eval_at(h) - eval_at(-h)) / (2 * h);
    EXPECT_NE(analytic, 0.0);
    EXPECT_LE(std::abs(numeric - analytic) / std::max(std::abs(numeric), 1e-8), 1e-3) << c << " " << y << " " << x;
    ++checked;
  }
  EXPECT_EQ(checked, 6);
}
