// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "test_support.hpp"
#include "vibertgrid/errors.hpp"
#include "vibertgrid/heads.hpp"

using namespace vbg;

namespace {

torch::Tensor map_tensor(const oracle::Map& m) {
  return torch::tensor(m.v, torch::kFloat64).view({1, 1, m.h, m.w});
}

HeadConfig small_head(bool late = true) {
  HeadConfig c;
  c.num_fields = 3;
  c.feature_channels = 4;
  c.embedding_dim = 6;
  c.fc_dim = 8;
  c.late_fusion = late;
  c.aux_channels = 4;
  c.init_std = 0.3;
  return c;
}

void zero_all(torch::nn::Module& m) {
  torch::NoGradGuard guard;
  for (auto& p : m.parameters()) p.zero_();
}

}  // namespace

TEST(RoiAlign, ConstantMapGivesConstantBins) {
  auto map = torch::full({1, 2, 16, 16}, 3.25, torch::kFloat64);
  auto out = roi_align(map, {Rect{4, 6, 40, 30}, Rect{0, 0, 64, 64}});
  ASSERT_EQ(out.sizes(), (std::vector<std::int64_t>{2, 2, 7, 7}));
  EXPECT_LE((out - 3.25).abs().max().item<double>(), 1e-12);
}

TEST(RoiAlign, LinearRampEqualsMeanSampleCoordinate) {
  auto ramp = torch::arange(16, torch::kFloat64).view({1, 1, 1, 16}).expand({1, 1, 16, 16}).contiguous();
  const Rect r{10, 12, 46, 33};  // image pixels, map units = / 4
  auto out = roi_align(ramp, {r});
  const double x0 = r.left / 4, bw = (r.right - r.left) / 4 / 7;
  for (int bx = 0; bx < 7; ++bx) {
    const double mean_x = x0 + (bx + 0.5) * bw;
    for (int by = 0; by < 7; ++by) EXPECT_NEAR(out[0][0][by][bx].item<double>(), mean_x, 1e-12);
  }
}

TEST(RoiAlign, DualOracle) {
  std::mt19937 rng(11);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 10; ++trial) {
    auto m = oracle::smooth_random_map(rng, 16, 16);
    const double x0 = u(rng) * 10, y0 = u(rng) * 10;
    const double x1 = x0 + 1 + u(rng) * (15 - x0), y1 = y0 + 1 + u(rng) * (15 - y0);
    auto got = roi_align(map_tensor(m), {Rect{4 * x0, 4 * y0, 4 * x1, 4 * y1}});
    auto exact = oracle::roi_exact(m, x0, y0, x1, y1);
    auto dense = oracle::roi_dense(m, x0, y0, x1, y1, 200);
    for (int b = 0; b < 49; ++b) {
      const double v = got[0][0][b / 7][b % 7].item<double>();
      EXPECT_NEAR(v, exact[static_cast<std::size_t>(b)], 1e-6);
      EXPECT_NEAR(v, dense[static_cast<std::size_t>(b)], 2e-2);
    }
  }
}

TEST(RoiAlign, ExactOracleAtBordersAndOutside) {
  std::mt19937 rng(12);
  auto m = oracle::smooth_random_map(rng, 10, 12);
  for (auto [x0, y0, x1, y1] : std::vector<std::array<double, 4>>{
           {-3, -2, 4, 5}, {8, 7, 14, 12}, {10.5, 8.5, 12.2, 10.1}, {-1.3, -1.2, 0.6, 0.7}}) {
    auto got = roi_align(map_tensor(m), {Rect{4 * x0, 4 * y0, 4 * x1, 4 * y1}});
    auto exact = oracle::roi_exact(m, x0, y0, x1, y1);
    for (int b = 0; b < 49; ++b) EXPECT_NEAR(got[0][0][b / 7][b % 7].item<double>(), exact[b], 1e-9);
  }
}

TEST(RoiAlign, LinearInMap) {
  torch::manual_seed(13);
  auto f = torch::randn({1, 3, 16, 16}, torch::kFloat64);
  auto g = torch::randn({1, 3, 16, 16}, torch::kFloat64);
  std::vector<Rect> rects{{3, 5, 50, 20}, {0, 0, 64, 64}, {30, 30, 31, 45}};
  auto lhs = roi_align(2.5 * f - 0.75 * g, rects);
  auto rhs = 2.5 * roi_align(f, rects) - 0.75 * roi_align(g, rects);
  EXPECT_LE((lhs - rhs).abs().max().item<double>(), 1e-5);
}

TEST(RoiAlign, DegenerateRectWarns) {
  ScopedWarningCapture capture;
  auto out = roi_align(torch::ones({1, 1, 8, 8}), {Rect{5, 5, 5, 9}});
  EXPECT_TRUE(capture.contains("degenerate"));
  EXPECT_TRUE(torch::isfinite(out).all().item<bool>());
  EXPECT_EQ(roi_align(torch::ones({1, 1, 8, 8}), {}).size(0), 0);
}

TEST(RoiAlign, GradientFlowsToMap) {
  auto map = torch::rand({1, 2, 8, 8}, torch::kFloat64).requires_grad_(true);
  roi_align(map, {Rect{2, 2, 20, 20}}).sum().backward();
  EXPECT_GT(map.grad().abs().sum().item<double>(), 0.0);
}

TEST(WordHead, ZeroWeightsGiveHalf) {
  WordHead head(small_head());
  zero_all(*head);
  auto pred = head->forward(torch::randn({5, 4, 7, 7}), torch::randn({5, 6}));
  EXPECT_LE((pred.o1 - 0.5).abs().max().item<double>(), 1e-12);
  EXPECT_EQ(pred.o2.sizes(), (std::vector<std::int64_t>{5, 3}));
  EXPECT_LE((pred.o2 - 0.5).abs().max().item<double>(), 1e-12);
}

TEST(WordHead, LateFusionOffIgnoresEmbeddings) {
  torch::manual_seed(14);
  WordHead off(small_head(false));
  auto pooled = torch::randn({4, 4, 7, 7});
  auto a = off->forward(pooled, torch::randn({4, 6}));
  auto b = off->forward(pooled, torch::randn({4, 6}));
  EXPECT_TRUE(torch::equal(a.o1, b.o1));
  EXPECT_TRUE(torch::equal(a.o2, b.o2));
  WordHead on(small_head(true));
  auto c = on->forward(pooled, torch::randn({4, 6}));
  auto d = on->forward(pooled, torch::randn({4, 6}));
  EXPECT_FALSE(torch::equal(c.o2, d.o2));
}

TEST(WordHead, TextOnlyPathUsesEmbeddings) {
  auto cfg = small_head();
  cfg.roi_features = false;
  WordHead head(cfg);
  auto pred = head->forward(torch::Tensor(), torch::randn({3, 6}));
  EXPECT_EQ(pred.o1.size(0), 3);
  EXPECT_TRUE(((pred.o2 > 0) & (pred.o2 < 1)).all().item<bool>());
}

TEST(WordLoss, UniformPredictionIsLn2) {
  WordPrediction pred{torch::full({4}, 0.5, torch::kFloat64), torch::full({4, 3}, 0.5, torch::kFloat64)};
  WordBatch1 b1{{0, 1, 2}, {1, 0, 1}};
  WordBatch2 b2{{0, 2, 3}, {{1, 0, 0}, {0, 1, 1}, {0, 0, 0}}};
  auto l = loss_word(pred, b1, b2);
  EXPECT_NEAR(l.l1.item<double>(), std::log(2.0), 1e-12);
  EXPECT_NEAR(l.l2.item<double>(), std::log(2.0), 1e-12);
  EXPECT_NEAR(l.lc.item<double>(), 2 * std::log(2.0), 1e-12);
}

TEST(WordLoss, ScalarHandComputation) {
  WordPrediction pred{torch::tensor({0.9, 0.2}, torch::kFloat64), torch::full({2, 1}, 0.5, torch::kFloat64)};
  auto l = loss_word(pred, WordBatch1{{0, 1}, {1, 0}}, WordBatch2{{0}, {{1}}});
  EXPECT_NEAR(l.l1.item<double>(), 0.164252, 1e-6);
  EXPECT_NEAR(l.l1.item<double>(), (-std::log(0.9) - std::log(0.8)) / 2, 1e-12);
}

TEST(WordLoss, SecondStageNormalization) {
  // Three words, two fields: per-classifier divides the BCE sum by 6, literal by 3.
  auto o2 = torch::tensor({{0.9, 0.3}, {0.6, 0.2}, {0.1, 0.8}}, torch::kFloat64);
  WordPrediction pred{torch::full({3}, 0.5, torch::kFloat64), o2};
  WordBatch2 b2{{0, 1, 2}, {{1, 0}, {1, 0}, {0, 1}}};
  const double sum = -std::log(0.9) - std::log(0.7) - std::log(0.6) - std::log(0.8) - std::log(0.9) - std::log(0.8);
  EXPECT_NEAR(loss_word(pred, WordBatch1{{0}, {1}}, b2).l2.item<double>(), sum / 6, 1e-12);
  EXPECT_NEAR(loss_word(pred, WordBatch1{{0}, {1}}, b2, SecondStageNorm::kLiteral).l2.item<double>(), sum / 3, 1e-12);
}

TEST(WordLoss, PerfectPredictionsNearZero) {
  WordPrediction pred{torch::tensor({1.0, 0.0, 1.0}, torch::kFloat64),
                      torch::tensor({{1.0, 0.0}, {0.0, 1.0}, {0.0, 0.0}}, torch::kFloat64)};
  auto l = loss_word(pred, WordBatch1{{0, 1, 2}, {1, 0, 1}}, WordBatch2{{0, 1, 2}, {{1, 0}, {0, 1}, {0, 0}}});
  EXPECT_LE(l.l1.item<double>(), 1e-6);
  EXPECT_LE(l.l2.item<double>(), 1e-6);
  EXPECT_TRUE(std::isfinite(l.lc.item<double>()));
}

TEST(WordLoss, EmptyBatchesWarnAndGiveZero) {
  WordPrediction pred{torch::full({2}, 0.3, torch::kFloat64), torch::full({2, 2}, 0.3, torch::kFloat64)};
  ScopedWarningCapture capture;
  auto l = loss_word(pred, {}, {});
  EXPECT_EQ(l.lc.item<double>(), 0.0);
  EXPECT_EQ(capture.messages().size(), 2u);
}

TEST(WordLoss, TargetRowSizeChecked) {
  WordPrediction pred{torch::full({2}, 0.3, torch::kFloat64), torch::full({2, 2}, 0.3, torch::kFloat64)};
  EXPECT_THROW(loss_word(pred, WordBatch1{{0}, {1}}, WordBatch2{{0}, {{1, 0, 0}}}), ShapeError);
}

TEST(AuxLoss, UniformPredictionsGiveLn3AndLn2) {
  PixelPrediction pred{torch::full({3, 4, 5}, 1.0 / 3, torch::kFloat64), torch::full({2, 4, 5}, 0.5, torch::kFloat64)};
  PixelBatch1 b1{{{0, 0}, {4, 3}, {2, 1}}, {0, 1, 2}};
  PixelBatch2 b2{{{1, 1}, {3, 2}, {0, 3}}, {{1, 0}, {0, 1}, {0, 0}}};
  auto l = loss_aux(pred, b1, b2);
  EXPECT_NEAR(l.aux1.item<double>(), std::log(3.0), 1e-12);
  EXPECT_NEAR(l.aux2.item<double>(), std::log(2.0), 1e-12);
  EXPECT_NEAR(l.aux.item<double>(), std::log(3.0) + std::log(2.0), 1e-12);
}

TEST(AuxLoss, SinglePixelCrossEntropy) {
  auto x1 = torch::zeros({3, 2, 2}, torch::kFloat64);
  x1[0][1][0] = 0.7;
  x1[1][1][0] = 0.2;
  x1[2][1][0] = 0.1;
  PixelPrediction pred{x1, torch::full({1, 2, 2}, 0.5, torch::kFloat64)};
  auto l = loss_aux(pred, PixelBatch1{{{0, 1}}, {0}}, PixelBatch2{{{0, 0}}, {{1}}});
  EXPECT_NEAR(l.aux1.item<double>(), 0.356675, 1e-6);
  EXPECT_NEAR(l.aux1.item<double>(), -std::log(0.7), 1e-12);
}

TEST(AuxLoss, EmptyBatchesWarn) {
  PixelPrediction pred{torch::full({3, 2, 2}, 1.0 / 3), torch::full({1, 2, 2}, 0.5)};
  ScopedWarningCapture capture;
  EXPECT_EQ(loss_aux(pred, {}, {}).aux.item<double>(), 0.0);
  EXPECT_TRUE(capture.contains("LAUX-1"));
  EXPECT_TRUE(capture.contains("LAUX-2"));
}

TEST(TotalLoss, LinearForm) {
  auto t = [](double v) { return torch::tensor(v, torch::kFloat64); };
  EXPECT_DOUBLE_EQ(total_loss(t(1), t(2), 1).item<double>(), 3.0);
  EXPECT_DOUBLE_EQ(total_loss(t(0.5), t(0.25), 2).item<double>(), 1.0);
  EXPECT_DOUBLE_EQ(total_loss(t(0.7), t(std::nan("")), 0).item<double>(), 0.7);
  EXPECT_THROW(total_loss(t(1), t(1), -0.1), ConfigError);
}

TEST(AuxHead, ShapesAndSoftmaxRows) {
  torch::manual_seed(15);
  AuxHead head(small_head());
  head->eval();
  torch::NoGradGuard guard;
  auto pred = head->forward(torch::randn({1, 4, 32, 32}), 128, 128);
  EXPECT_EQ(pred.x1.sizes(), (std::vector<std::int64_t>{3, 128, 128}));
  EXPECT_EQ(pred.x2.sizes(), (std::vector<std::int64_t>{3, 128, 128}));
  EXPECT_LE((pred.x1.sum(0) - 1).abs().max().item<double>(), 1e-5);
  auto cropped = head->forward(torch::randn({1, 4, 32, 32}), 125, 127);
  EXPECT_EQ(cropped.x1.size(1), 125);
  EXPECT_EQ(cropped.x1.size(2), 127);
  EXPECT_THROW(head->forward(torch::randn({1, 4, 8, 8}), 40, 20), ShapeError);
}

TEST(AuxHead, ClassifyingBeforeUpsampleMatchesReference) {
  torch::manual_seed(16);
  AuxHead head(small_head());
  head->to(torch::kFloat64);
  torch::NoGradGuard guard;
  auto p = torch::randn({1, 4, 12, 10}, torch::kFloat64);
  auto a = head->forward(p, 46, 39);
  auto b = head->forward_upsample_first(p, 46, 39);
  EXPECT_LE((a.x1 - b.x1).abs().max().item<double>(), 1e-12);
  EXPECT_LE((a.x2 - b.x2).abs().max().item<double>(), 1e-12);
}

TEST(AuxHead, ConstantInputGivesConstantInterior) {
  torch::manual_seed(17);
  AuxHead head(small_head());
  torch::NoGradGuard guard;
  auto pred = head->forward(torch::full({1, 4, 16, 16}, 0.8), 64, 64);
  auto interior = pred.x2.slice(1, 12, 52).slice(2, 12, 52);
  EXPECT_LE((interior - interior.slice(1, 0, 1).slice(2, 0, 1)).abs().max().item<double>(), 1e-6);
}

TEST(WordHead, GradientMatchesFiniteDifference) {
  torch::manual_seed(18);
  WordHead head(small_head());
  head->to(torch::kFloat64);
  auto pooled = torch::randn({3, 4, 7, 7}, torch::kFloat64);
  auto emb = torch::randn({3, 6}, torch::kFloat64);
  WordBatch1 b1{{0, 1, 2}, {1, 0, 1}};
  WordBatch2 b2{{0, 2}, {{1, 0, 0}, {0, 1, 1}}};
  auto f = [&] { return loss_word(head->forward(pooled, emb), b1, b2).lc; };
  head->zero_grad();
  f().backward();
  torch::NoGradGuard guard;
  int checked = 0;
  for (const auto& p : head->named_parameters()) {
    auto flat = p.value().view(-1);
    auto g = p.value().grad().view(-1);
    const auto idx = g.abs().argmax().item<std::int64_t>();
    const double analytic = g[idx].item<double>();
    if (std::abs(analytic) < 1e-8) continue;
    const double orig = flat[idx].item<double>();
    flat[idx] = orig + 1e-5;
    const double up = f().item<double>();
    flat[idx] = orig - 1e-5;
    const double down = f().item<double>();
    flat[idx] = orig;
    const double numeric = (up - down) / 2e-5;
    EXPECT_LE(std::abs(numeric - analytic) / std::max(std::abs(numeric), std::abs(analytic)), 1e-5) << p.key();
    ++checked;
  }
  EXPECT_GE(checked, 8);
}
