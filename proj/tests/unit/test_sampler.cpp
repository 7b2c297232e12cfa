// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <algorithm>
#include <set>

#include "oracles.hpp"
#include "test_support.hpp"
#include "vibertgrid/sampler.hpp"

using namespace vbg;
using vbg::testing::box_word;

namespace {

Document page(int w, int h, std::vector<Word> words) {
  Document d;
  d.page_id = "p";
  d.image = Image(h, w, 1.0f);
  d.words = std::move(words);
  return d;
}

std::vector<Word> mixed_words(int positives, int negatives) {
  std::vector<Word> out;
  for (int i = 0; i < positives + negatives; ++i)
    out.push_back(box_word("w", i, 0, i + 1, 1, i < positives ? std::set<int>{i % 2} : std::set<int>{}));
  return out;
}

}  // namespace

TEST(PixelCategoryMap, BlankPageIsAllCategoryOne) {
  auto map = build_pixel_category_map(page(20, 10, {}), 2);
  EXPECT_TRUE(std::all_of(map.categories.begin(), map.categories.end(), [](auto c) { return c == 1; }));
  for (const auto& m : map.field_masks) EXPECT_EQ(std::count(m.begin(), m.end(), 1), 0);
}

TEST(PixelCategoryMap, LabeledBoxCoversExactly40Pixels) {
  auto map = build_pixel_category_map(page(30, 20, {box_word("x", 5, 6, 15, 10, {1})}), 2);
  EXPECT_EQ(std::count(map.categories.begin(), map.categories.end(), 2), 40);
  EXPECT_EQ(std::count(map.field_masks[1].begin(), map.field_masks[1].end(), 1), 40);
  EXPECT_EQ(std::count(map.field_masks[0].begin(), map.field_masks[0].end(), 1), 0);
  EXPECT_EQ(map.category(5, 6), 2);
  EXPECT_EQ(map.category(15, 6), 1);
}

TEST(PixelCategoryMap, UnlabeledWordIsCategoryThree) {
  auto map = build_pixel_category_map(page(30, 20, {box_word("x", 2, 2, 6, 6)}), 1);
  EXPECT_EQ(std::count(map.categories.begin(), map.categories.end(), 3), 16);
}

TEST(PixelCategoryMap, LaterWordWinsAndMatchesBruteForce) {
  std::mt19937 rng(3);
  std::uniform_real_distribution<double> u(0, 1);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<Word> words;
    for (int i = 0; i < 8; ++i) {
      const double l = u(rng) * 40, t = u(rng) * 30;
      std::set<int> labels;
      if (u(rng) < 0.5) labels.insert(static_cast<int>(u(rng) * 3));
      words.push_back(box_word("w", l, t, l + 2 + u(rng) * 15, t + 2 + u(rng) * 8, labels));
    }
    auto doc = page(50, 40, words);
    auto map = build_pixel_category_map(doc, 3);
    std::array<int, 3> counts{};
    for (int y = 0; y < 40; ++y)
      for (int x = 0; x < 50; ++x) {
        int owner = -1;
        for (int i = 0; i < 8; ++i)
          if (oracle::inside_quad(x + 0.5, y + 0.5, words[static_cast<std::size_t>(i)].quad)) owner = i;
        const int expect = owner < 0 ? 1 : (words[static_cast<std::size_t>(owner)].labels.empty() ? 3 : 2);
        ASSERT_EQ(map.category(x, y), expect) << x << "," << y;
        ++counts[static_cast<std::size_t>(expect - 1)];
        for (int k = 0; k < 3; ++k) {
          const bool set = owner >= 0 && words[static_cast<std::size_t>(owner)].labels.count(k);
          ASSERT_EQ(map.field_masks[static_cast<std::size_t>(k)][map.index(x, y)], set ? 1 : 0);
        }
      }
    EXPECT_EQ(counts[0] + counts[1] + counts[2], 50 * 40);
  }
}

TEST(SampleWords, CapsAtAvailability) {
  Rng rng(1);
  auto b = sample_words(mixed_words(10, 5), 64, 64, rng);
  EXPECT_EQ(b.ids.size(), 15u);
  EXPECT_EQ(std::count(b.targets.begin(), b.targets.end(), 1), 10);
}

TEST(SampleWords, DistinctWithoutReplacement) {
  Rng rng(2);
  auto words = mixed_words(20, 200);
  auto b = sample_words(words, 64, 64, rng);
  EXPECT_EQ(b.ids.size(), 84u);
  EXPECT_EQ(std::set<int>(b.ids.begin(), b.ids.end()).size(), 84u);
  for (std::size_t i = 0; i < b.ids.size(); ++i)
    EXPECT_EQ(b.targets[i], words[static_cast<std::size_t>(b.ids[i])].has_label() ? 1 : 0);
}

TEST(SampleWords, DeterministicUnderSeed) {
  auto words = mixed_words(50, 200);
  Rng a(9), b(9);
  EXPECT_EQ(sample_words(words, 16, 16, a).ids, sample_words(words, 16, 16, b).ids);
  auto r1 = derive_rng(4, "doc", 7), r2 = derive_rng(4, "doc", 7), r3 = derive_rng(4, "doc", 8);
  EXPECT_EQ(r1(), r2());
  EXPECT_NE(derive_rng(4, "doc", 7)(), r3());
}

TEST(Ohem, SelectsLargestLossesWithTieBreak) {
  std::vector<std::pair<int, double>> l{{0, 0.1}, {1, 0.9}, {2, 0.5}};
  EXPECT_EQ(ohem_select(l, 2), (std::vector<int>{1, 2}));
  EXPECT_TRUE(ohem_select(l, 0).empty());
  EXPECT_TRUE(ohem_select(l, 5, {0, 1, 2}).empty());
  EXPECT_EQ(ohem_select(l, 5, {1}), (std::vector<int>{2, 0}));
  EXPECT_EQ(ohem_select({{5, 0.3}, {2, 0.3}, {7, 0.3}}, 2), (std::vector<int>{2, 5}));
}

TEST(Ohem, OutputIsSortedPrefix) {
  std::mt19937 rng(5);
  std::uniform_real_distribution<double> u(0, 1);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<std::pair<int, double>> l;
    for (int i = 0; i < 40; ++i) l.emplace_back(i, std::round(u(rng) * 10) / 10);
    auto picked = ohem_select(l, 12);
    std::vector<double> all;
    for (auto& p : l) all.push_back(p.second);
    std::sort(all.rbegin(), all.rend());
    for (std::size_t i = 0; i < picked.size(); ++i) EXPECT_EQ(l[static_cast<std::size_t>(picked[i])].second, all[i]);
  }
}

TEST(SampleHardWords, RanksWithinPositivesAndNegatives) {
  auto words = mixed_words(4, 4);
  std::vector<double> losses{0.1, 0.8, 0.3, 0.2, 0.9, 0.05, 0.4, 0.7};
  auto b = sample_hard_words(words, losses, 2, 2, 2);
  EXPECT_EQ(b.ids, (std::vector<int>{1, 2, 4, 7}));
  EXPECT_EQ(b.targets[0], (std::vector<int>{0, 1}));
  EXPECT_EQ(b.targets[2], (std::vector<int>{0, 0}));
}

TEST(SamplePixels, CountsCapsAndTargets) {
  auto doc = page(40, 30, {box_word("a", 2, 2, 12, 12, {0}), box_word("b", 20, 5, 30, 10)});
  auto map = build_pixel_category_map(doc, 1);
  std::vector<double> losses(40 * 30);
  for (std::size_t i = 0; i < losses.size(); ++i) losses[i] = static_cast<double>((i * 37) % 101);
  SamplingConfig c;
  Rng rng(6);
  auto s = sample_pixels(map, c, losses, rng);
  // 100 labeled pixels, 50 unlabeled word pixels, the rest background.
  EXPECT_EQ(std::count(s.batch1.targets.begin(), s.batch1.targets.end(), 1), 100);
  EXPECT_EQ(std::count(s.batch1.targets.begin(), s.batch1.targets.end(), 2), 50);
  EXPECT_EQ(std::count(s.batch1.targets.begin(), s.batch1.targets.end(), 0), 256);
  EXPECT_EQ(s.batch2.pixels.size(), 150u);
  std::set<std::pair<int, int>> seen;
  for (std::size_t i = 0; i < s.batch1.pixels.size(); ++i) {
    const auto& p = s.batch1.pixels[i];
    EXPECT_TRUE(seen.insert({p.x, p.y}).second);
    EXPECT_EQ(map.category(p.x, p.y), s.batch1.targets[i] + 1);
  }
  for (std::size_t i = 0; i < s.batch2.pixels.size(); ++i) {
    const auto& p = s.batch2.pixels[i];
    const bool inside_a = oracle::inside_quad(p.x + 0.5, p.y + 0.5, doc.words[0].quad);
    EXPECT_EQ(s.batch2.targets[i][0], inside_a ? 1 : 0);
    EXPECT_NE(map.category(p.x, p.y), 1);
  }
}

TEST(SamplePixels, HalfCountsAndDeterminism) {
  SamplingConfig c;
  c.half_counts = true;
  auto e = c.effective();
  EXPECT_EQ(e.word_positive, 32);
  EXPECT_EQ(e.hard_word_negative, 16);
  EXPECT_EQ(e.pixel_category2, 256);
  EXPECT_EQ(e.hard_pixel_positive, 256);
  auto doc = page(64, 64, {box_word("a", 2, 2, 40, 30, {0})});
  auto map = build_pixel_category_map(doc, 1);
  std::vector<double> losses(64 * 64, 1.0);
  Rng a(8), b(8);
  auto s1 = sample_pixels(map, c, losses, a);
  auto s2 = sample_pixels(map, c, losses, b);
  EXPECT_EQ(s1.batch1.pixels, s2.batch1.pixels);
  EXPECT_EQ(std::count(s1.batch1.targets.begin(), s1.batch1.targets.end(), 0), 128);
  EXPECT_EQ(s1.batch2.pixels.size(), 256u);
}
