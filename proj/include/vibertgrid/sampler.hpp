// SPDX-License-Identifier: Apache-2.0
//
// Word and pixel mini-batch construction: uniform sampling, OHEM hard example
// selection, and the three-way pixel category map.
#pragma once

#include <cstdint>
#include <random>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "vibertgrid/docmodel.hpp"
#include "vibertgrid/heads.hpp"

namespace vbg {

using Rng = std::mt19937_64;

/// Independent stream for one document at one step.
Rng derive_rng(std::uint64_t seed, const std::string& page_id, std::uint64_t step);

/// Categories: 1 = outside every word box, 2 = inside a labeled word, 3 =
/// inside an unlabeled word. Pixel (x, y) is tested at its center.
struct PixelCategoryMap {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> categories;
  std::vector<int> owner;  // word index or -1
  std::vector<std::vector<std::uint8_t>> field_masks;

  std::size_t index(int x, int y) const { return static_cast<std::size_t>(y) * width + x; }
  int category(int x, int y) const { return categories[index(x, y)]; }
};

PixelCategoryMap build_pixel_category_map(const Document& doc, int num_fields);

struct SamplingConfig {
  int word_positive = 64;
  int word_negative = 64;
  int hard_word_positive = 32;
  int hard_word_negative = 32;
  int pixel_category1 = 256;
  int pixel_category2 = 512;
  int pixel_category3 = 256;
  int hard_pixel_positive = 512;
  int hard_pixel_negative = 512;
  /// Halves every count (small receipt-style pages).
  bool half_counts = false;

  SamplingConfig effective() const;
};

/// Uniform sample of min(k, |pool|) distinct elements.
std::vector<int> sample_without_replacement(const std::vector<int>& pool, int k, Rng& rng);

/// Random first-stage batch: positives are words carrying any field label.
WordBatch1 sample_words(const std::vector<Word>& words, int positives, int negatives, Rng& rng);

/// The k candidates with largest loss, excluding `exclude`; ties go to the
/// smaller id.
std::vector<int> ohem_select(const std::vector<std::pair<int, double>>& losses, int k,
                             const std::set<int>& exclude = {});

/// Second-stage batch of hard positive and hard negative words ranked by
/// `losses` (one per word).
WordBatch2 sample_hard_words(const std::vector<Word>& words, const std::vector<double>& losses, int positives,
                             int negatives, int num_fields);

struct PixelSample {
  PixelBatch1 batch1;
  PixelBatch2 batch2;
};

/// batch1: uniform per-category samples. batch2: OHEM over pixels with some
/// field set (hard positives) and over category-2 pixels without fields plus
/// category-3 pixels (hard negatives). `losses` holds one value per pixel.
PixelSample sample_pixels(const PixelCategoryMap& map, const SamplingConfig& counts, const std::vector<double>& losses,
                          Rng& rng);

struct SampleBatch {
  WordBatch1 word_batch1;
  WordBatch2 word_batch2;
  PixelBatch1 pixel_batch1;
  PixelBatch2 pixel_batch2;
};

}  // namespace vbg
