// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <map>

#include "test_support.hpp"
#include "vibertgrid/errors.hpp"
#include "vibertgrid/trainer.hpp"

using namespace vbg;
using vbg::testing::tiny_config;
using vbg::testing::tiny_document;

namespace {

ParameterGroup scalar_group(double w, double g) {
  auto t = torch::tensor({w}, torch::kFloat64).requires_grad_(true);
  t.mutable_grad() = torch::tensor({g}, torch::kFloat64);
  return ParameterGroup{"g", {{"w", t}}};
}

double first(const ParameterGroup& g) { return g.params[0].tensor.item<double>(); }

struct Snapshot {
  std::map<std::string, torch::Tensor> before, grad;
};

}  // namespace

TEST(Sgd, OneAndTwoStepClosedForm) {
  auto g = scalar_group(1.0, 0.5);
  SgdOptions opt{0.1, 0.9, 0.0};
  SgdState state;
  sgd_step(g, 0.1, opt, state);
  EXPECT_NEAR(first(g), 0.95, 1e-15);
  sgd_step(g, 0.1, opt, state);
  EXPECT_NEAR(state.momentum.at("w").item<double>(), 0.95, 1e-15);
  EXPECT_NEAR(first(g), 0.855, 1e-15);
}

TEST(AdamW, FirstStepClosedForm) {
  auto g = scalar_group(1.0, 0.5);
  AdamWOptions opt;
  AdamWState state;
  adamw_step(g, 2e-5, opt, state);
  EXPECT_NEAR(first(g), 0.9999798, 1e-9);
  EXPECT_NEAR(first(g), 1.0 - 2e-5 * 1e-2 - 2e-5 * 0.5 / (0.5 + 1e-8), 1e-15);
}

TEST(AdamW, SecondStepMomentRecurrence) {
  auto g = scalar_group(2.0, 0.3);
  AdamWOptions opt;
  AdamWState state;
  adamw_step(g, 1e-3, opt, state);
  g.params[0].tensor.mutable_grad() = torch::tensor({-0.7}, torch::kFloat64);
  const double w1 = first(g);
  adamw_step(g, 1e-3, opt, state);
  const double m = 0.9 * 0.1 * 0.3 + 0.1 * -0.7;
  const double v = 0.999 * 0.001 * 0.09 + 0.001 * 0.49;
  const double mhat = m / (1 - 0.81), vhat = v / (1 - 0.999 * 0.999);
  EXPECT_NEAR(first(g), w1 * (1 - 1e-3 * 1e-2) - 1e-3 * mhat / (std::sqrt(vhat) + 1e-8), 1e-14);
}

TEST(Optimizers, NonFiniteGradientAbortsWholeStep) {
  auto a = torch::tensor({1.0}, torch::kFloat64).requires_grad_(true);
  auto b = torch::tensor({2.0}, torch::kFloat64).requires_grad_(true);
  a.mutable_grad() = torch::tensor({0.1}, torch::kFloat64);
  b.mutable_grad() = torch::tensor({NAN}, torch::kFloat64);
  ParameterGroup g{"g", {{"a", a}, {"b", b}}};
  SgdState s;
  try {
    sgd_step(g, 0.1, SgdOptions{}, s);
    FAIL();
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("'b'"), std::string::npos);
  }
  EXPECT_EQ(a.item<double>(), 1.0);
  AdamWState as;
  EXPECT_THROW(adamw_step(g, 0.1, AdamWOptions{}, as), NumericError);
  EXPECT_EQ(a.item<double>(), 1.0);
}

TEST(Schedule, WarmupDecayAndConstantTransformerRate) {
  ScheduleConfig c;
  auto half = lr_schedule(0, 5, 10, c);
  EXPECT_EQ(half.lr_v, 0.008);
  EXPECT_EQ(half.lr_t, 1e-5);
  EXPECT_EQ(lr_schedule(0, 0, 10, c).lr_v, 0.0);
  EXPECT_EQ(lr_schedule(1, 0, 10, c).lr_v, 0.016);
  EXPECT_EQ(lr_schedule(1, 0, 10, c).lr_t, 2e-5);
  EXPECT_EQ(lr_schedule(14, 3, 10, c).lr_v, 0.016);
  EXPECT_EQ(lr_schedule(15, 0, 10, c).lr_v, 0.0016);
  EXPECT_EQ(lr_schedule(16, 0, 10, c).lr_v, 0.0016);
  EXPECT_EQ(lr_schedule(31, 0, 10, c).lr_v, 0.00016);
  EXPECT_EQ(lr_schedule(31, 0, 10, c).lr_t, 2e-5);
  EXPECT_THROW(lr_schedule(-1, 0, 10, c), ConfigError);
}

TEST(Resize, CapOnLongSideAndIdentity) {
  EXPECT_EQ(scaled_size(600, 1000, 512, 800), (std::pair<int, int>{480, 800}));
  EXPECT_EQ(scaled_size(512, 512, 512, 800), (std::pair<int, int>{512, 512}));
  EXPECT_EQ(scaled_size(300, 400, 600, 0), (std::pair<int, int>{600, 800}));
}

TEST(Resize, QuadsScaleWithImage) {
  Document d;
  d.page_id = "r";
  d.image = Image(30, 30, 1.0f);
  d.words.push_back(vbg::testing::box_word("a", 10, 10, 20, 20));
  auto r = resize_document(d, 60, 60);
  EXPECT_EQ(r.width(), 60);
  EXPECT_DOUBLE_EQ(r.words[0].quad[0].x, 20);
  EXPECT_DOUBLE_EQ(r.words[0].quad[2].y, 40);
  Rng rng(1);
  auto m = multiscale_resize(d, {45}, 800, rng);
  EXPECT_EQ(m.height(), 45);
  EXPECT_DOUBLE_EQ(m.words[0].quad[2].x, 30);
}

TEST(Partition, TotalAndDisjoint) {
  ViBERTgrid model(tiny_config().model);
  auto part = partition_parameters(*model);
  std::int64_t total = 0;
  for (const auto& p : model->parameters()) total += p.numel();
  EXPECT_EQ(part.transformer.numel() + part.cnn_heads.numel(), total);
  bool fuse_in_cnn = false;
  for (const auto& p : part.cnn_heads.params) fuse_in_cnn = fuse_in_cnn || p.name == "word_head.fc_fuse.weight";
  EXPECT_TRUE(fuse_in_cnn);
  for (const auto& p : part.transformer.params) EXPECT_EQ(p.name.rfind("encoder.", 0), 0u);
  torch::nn::Module stray;
  stray.register_parameter("mystery", torch::zeros({1}));
  EXPECT_THROW(partition_parameters(stray), ConfigError);
}

TEST(Trainer, OneStepMatchesClosedFormsAt64Bit) {
  auto cfg = tiny_config();
  Trainer trainer(cfg);
  trainer.model()->to(torch::kFloat64);
  Snapshot snap;
  trainer.before_step = [&](Trainer& t) {
    for (const auto& p : t.model()->named_parameters()) {
      snap.before[p.key()] = p.value().detach().clone();
      if (p.value().grad().defined()) snap.grad[p.key()] = p.value().grad().clone();
    }
  };
  const auto doc = tiny_document();
  const LearningRates lr{3e-4, 0.01};
  trainer.train_step({&doc}, lr, false);
  const auto& a = cfg.train.adamw;
  const auto& s = cfg.train.sgd;
  int adam = 0, sgd = 0;
  for (const auto& p : trainer.partition().transformer.params) {
    if (!snap.grad.count(p.name)) continue;
    const auto& w = snap.before[p.name];
    const auto& g = snap.grad[p.name];
    auto expect = w * (1 - lr.lr_t * a.weight_decay) - lr.lr_t * g / (g.abs() + a.eps);
    EXPECT_LE((p.tensor - expect).abs().max().item<double>(), 1e-12) << p.name;
    ++adam;
  }
  for (const auto& p : trainer.partition().cnn_heads.params) {
    if (!snap.grad.count(p.name)) continue;
    const auto& w = snap.before[p.name];
    auto expect = w - lr.lr_v * (snap.grad[p.name] + s.weight_decay * w);
    EXPECT_LE((p.tensor - expect).abs().max().item<double>(), 1e-12) << p.name;
    ++sgd;
  }
  EXPECT_GT(adam, 10);
  EXPECT_GT(sgd, 20);
}

TEST(Trainer, FrozenEncoderChecksumConstant) {
  auto cfg = tiny_config();
  cfg.model.encoder.frozen = true;
  Trainer trainer(cfg);
  const auto doc = tiny_document();
  const auto enc = parameter_checksum(*trainer.model()->encoder());
  const auto cnn = parameter_checksum(*trainer.model()->backbone());
  for (int i = 0; i < 3; ++i) trainer.train_step({&doc}, LearningRates{1e-3, 0.01}, false);
  EXPECT_EQ(parameter_checksum(*trainer.model()->encoder()), enc);
  EXPECT_NE(parameter_checksum(*trainer.model()->backbone()), cnn);
}

TEST(Trainer, LambdaZeroLeavesAuxHeadWithoutGradient) {
  auto cfg = tiny_config();
  cfg.train.lambda = 0.0;
  Trainer trainer(cfg);
  double aux_grad = 0;
  trainer.before_step = [&](Trainer& t) {
    for (const auto& p : t.model()->aux_head()->parameters())
      if (p.grad().defined()) aux_grad += p.grad().abs().sum().item<double>();
  };
  const auto doc = tiny_document();
  auto report = trainer.train_step({&doc}, LearningRates{1e-4, 0.01}, false);
  EXPECT_EQ(aux_grad, 0.0);
  EXPECT_DOUBLE_EQ(report.loss, report.lc);
}

TEST(Trainer, DeterministicLossReports) {
  const auto doc = tiny_document();
  std::vector<const Document*> batch{&doc};
  auto run = [&] {
    Trainer t(tiny_config());
    std::vector<double> out;
    for (int i = 0; i < 5; ++i) {
      auto r = t.train_step(batch, 4);
      out.insert(out.end(), {r.l1, r.l2, r.laux1, r.laux2, r.loss, r.lr_t, r.lr_v});
    }
    return out;
  };
  EXPECT_EQ(run(), run());
}

TEST(Trainer, CheckpointRoundTripIsBitIdentical) {
  const auto dir = vbg::testing::temp_dir("ckpt");
  const auto doc = tiny_document();
  Trainer t(tiny_config());
  t.train_step({&doc}, LearningRates{1e-4, 0.01}, false);
  t.save(dir + "/a.ckpt");
  auto loaded = Trainer::from_checkpoint(read_checkpoint(dir + "/a.ckpt"));
  auto p1 = predict_document(t.model(), doc, t.vocab(), 64);
  auto p2 = predict_document(loaded.model(), doc, loaded.vocab(), 64);
  EXPECT_EQ(p1.o1, p2.o1);
  EXPECT_EQ(p1.o2, p2.o2);
  EXPECT_EQ(loaded.state().global_step, 1);
  // Continuing both from the same state gives the same next step.
  auto r1 = t.train_step({&doc}, LearningRates{1e-4, 0.01}, false);
  auto r2 = loaded.train_step({&doc}, LearningRates{1e-4, 0.01}, false);
  EXPECT_EQ(r1.loss, r2.loss);
  EXPECT_EQ(parameter_checksum(*t.model()), parameter_checksum(*loaded.model()));
}

TEST(Trainer, ResumeRefusesDifferentConfigWithDiff) {
  Trainer t(tiny_config());
  auto other_cfg = tiny_config();
  other_cfg.train.lambda = 0.5;
  Trainer other(other_cfg);
  try {
    other.resume(t.checkpoint());
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("train.lambda: 1 -> 0.5"), std::string::npos) << e.what();
  }
}

TEST(Trainer, OverfitsOneTinyDocument) {
  const auto doc = tiny_document();
  Trainer t(tiny_config());
  std::vector<double> losses;
  // Default peak rates of both groups.
  const LearningRates lr{t.config().train.lr_t, t.config().train.lr_v};
  for (int i = 0; i < 200; ++i) losses.push_back(t.train_step({&doc}, lr, false).loss);
  EXPECT_LE(losses.back(), 0.5 * losses[4]) << losses[4] << " -> " << losses.back();
}

TEST(Trainer, FitStopsAtTarget) {
  auto cfg = tiny_config();
  cfg.train.epochs = 3;
  Trainer t(cfg);
  std::vector<int> epochs;
  FitOptions opt;
  opt.on_epoch = [&](int e, double f1) {
    epochs.push_back(e);
    EXPECT_EQ(f1, -1);
  };
  auto r = fit(t, {tiny_document("a"), tiny_document("b")}, opt);
  EXPECT_EQ(r.epochs, 3);
  EXPECT_EQ(epochs, (std::vector<int>{1, 2, 3}));
  EXPECT_EQ(t.state().global_step, 6);
}

TEST(Config, TextRoundTripAndDiff) {
  auto cfg = tiny_config(3);
  cfg.train.sampling.half_counts = true;
  cfg.train.scales = {64, 96};
  const auto text = to_config_text(cfg);
  auto back = parse_config_text(text);
  EXPECT_EQ(to_config_text(back), text);
  auto changed = back;
  apply_config_entry(changed, "train.epochs", "7");
  EXPECT_EQ(config_diff(text, to_config_text(changed)), (std::vector<std::string>{"train.epochs: 33 -> 7"}));
  EXPECT_THROW(parse_config_text("bogus.key=1"), ConfigError);
  EXPECT_THROW(parse_config_text("train.epochs=many"), ConfigError);
  EXPECT_EQ(git_blob_hash(""), "e69de29bb2d1d6434b8b29ae775ad8c2e48c5391");
}
