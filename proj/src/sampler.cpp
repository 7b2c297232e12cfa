// SPDX-License-Identifier: Apache-2.0
#include "vibertgrid/sampler.hpp"

#include <algorithm>
#include <cmath>

#include "vibertgrid/text_util.hpp"

namespace vbg {

Rng derive_rng(std::uint64_t seed, const std::string& page_id, std::uint64_t step) {
  std::uint64_t s = mix64(seed);
  s = mix64(s ^ fnv1a64(page_id));
  s = mix64(s ^ step);
  return Rng(s);
}

PixelCategoryMap build_pixel_category_map(const Document& doc, int num_fields) {
  PixelCategoryMap map;
  map.height = doc.height();
  map.width = doc.width();
  const std::size_t n = static_cast<std::size_t>(map.height) * map.width;
  map.categories.assign(n, 1);
  map.owner.assign(n, -1);
  map.field_masks.assign(static_cast<std::size_t>(num_fields), std::vector<std::uint8_t>(n, 0));
  for (std::size_t i = 0; i < doc.words.size(); ++i) {
    const Rect r = bounding_rect(doc.words[i].quad);
    const int x0 = std::max(0, static_cast<int>(std::floor(r.left - 0.5)));
    const int x1 = std::min(map.width - 1, static_cast<int>(std::ceil(r.right - 0.5)));
    const int y0 = std::max(0, static_cast<int>(std::floor(r.top - 0.5)));
    const int y1 = std::min(map.height - 1, static_cast<int>(std::ceil(r.bottom - 0.5)));
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x)
        if (point_in_quad(Point{x + 0.5, y + 0.5}, doc.words[i].quad)) map.owner[map.index(x, y)] = static_cast<int>(i);
  }
  for (std::size_t p = 0; p < n; ++p) {
    const int w = map.owner[p];
    if (w < 0) continue;
    const auto& labels = doc.words[static_cast<std::size_t>(w)].labels;
    map.categories[p] = labels.empty() ? 3 : 2;
    for (int k : labels)
      if (k >= 0 && k < num_fields) map.field_masks[static_cast<std::size_t>(k)][p] = 1;
  }
  return map;
}

SamplingConfig SamplingConfig::effective() const {
  if (!half_counts) return *this;
  SamplingConfig h = *this;
  for (int* c : {&h.word_positive, &h.word_negative, &h.hard_word_positive, &h.hard_word_negative,
                 &h.pixel_category1, &h.pixel_category2, &h.pixel_category3, &h.hard_pixel_positive,
                 &h.hard_pixel_negative})
    *c /= 2;
  h.half_counts = false;
  return h;
}

std::vector<int> sample_without_replacement(const std::vector<int>& pool, int k, Rng& rng) {
  std::vector<int> items = pool;
  const std::size_t take = std::min<std::size_t>(items.size(), static_cast<std::size_t>(std::max(k, 0)));
  for (std::size_t i = 0; i < take; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, items.size() - 1);
    std::swap(items[i], items[pick(rng)]);
  }
  items.resize(take);
  return items;
}

WordBatch1 sample_words(const std::vector<Word>& words, int positives, int negatives, Rng& rng) {
  std::vector<int> pos, neg;
  for (std::size_t i = 0; i < words.size(); ++i) (words[i].has_label() ? pos : neg).push_back(static_cast<int>(i));
  WordBatch1 batch;
  for (int id : sample_without_replacement(pos, positives, rng)) {
    batch.ids.push_back(id);
    batch.targets.push_back(1);
  }
  for (int id : sample_without_replacement(neg, negatives, rng)) {
    batch.ids.push_back(id);
    batch.targets.push_back(0);
  }
  return batch;
}

std::vector<int> ohem_select(const std::vector<std::pair<int, double>>& losses, int k, const std::set<int>& exclude) {
  std::vector<std::pair<int, double>> candidates;
  candidates.reserve(losses.size());
  for (const auto& c : losses)
    if (!exclude.count(c.first)) candidates.push_back(c);
  const std::size_t take = std::min<std::size_t>(candidates.size(), static_cast<std::size_t>(std::max(k, 0)));
  auto harder = [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  };
  std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(take), candidates.end(), harder);
  std::vector<int> out;
  out.reserve(take);
  for (std::size_t i = 0; i < take; ++i) out.push_back(candidates[i].first);
  return out;
}

WordBatch2 sample_hard_words(const std::vector<Word>& words, const std::vector<double>& losses, int positives,
                             int negatives, int num_fields) {
  std::vector<std::pair<int, double>> pos, neg;
  for (std::size_t i = 0; i < words.size(); ++i)
    (words[i].has_label() ? pos : neg).emplace_back(static_cast<int>(i), losses.at(i));
  WordBatch2 batch;
  auto add = [&](int id) {
    batch.ids.push_back(id);
    std::vector<int> y(static_cast<std::size_t>(num_fields), 0);
    for (int k : words[static_cast<std::size_t>(id)].labels)
      if (k >= 0 && k < num_fields) y[static_cast<std::size_t>(k)] = 1;
    batch.targets.push_back(std::move(y));
  };
  for (int id : ohem_select(pos, positives)) add(id);
  for (int id : ohem_select(neg, negatives)) add(id);
  return batch;
}

PixelSample sample_pixels(const PixelCategoryMap& map, const SamplingConfig& counts, const std::vector<double>& losses,
                          Rng& rng) {
  const SamplingConfig c = counts.effective();
  std::vector<int> by_category[3];
  std::vector<std::pair<int, double>> hard_pos, hard_neg;
  const int n = map.height * map.width;
  const auto num_fields = map.field_masks.size();
  for (int p = 0; p < n; ++p) {
    const int cat = map.categories[static_cast<std::size_t>(p)];
    by_category[cat - 1].push_back(p);
    if (cat == 1) continue;
    bool any = false;
    for (const auto& m : map.field_masks) any = any || m[static_cast<std::size_t>(p)];
    if (any) hard_pos.emplace_back(p, losses.at(static_cast<std::size_t>(p)));
    else hard_neg.emplace_back(p, losses.at(static_cast<std::size_t>(p)));
  }
  PixelSample out;
  const int wanted[3] = {c.pixel_category1, c.pixel_category2, c.pixel_category3};
  for (int cat = 0; cat < 3; ++cat) {
    for (int p : sample_without_replacement(by_category[cat], wanted[cat], rng)) {
      out.batch1.pixels.push_back(PixelCoord{p % map.width, p / map.width});
      out.batch1.targets.push_back(cat);
    }
  }
  auto add = [&](int p) {
    out.batch2.pixels.push_back(PixelCoord{p % map.width, p / map.width});
    std::vector<int> y(num_fields, 0);
    for (std::size_t k = 0; k < num_fields; ++k) y[k] = map.field_masks[k][static_cast<std::size_t>(p)];
    out.batch2.targets.push_back(std::move(y));
  };
  for (int p : ohem_select(hard_pos, c.hard_pixel_positive)) add(p);
  for (int p : ohem_select(hard_neg, c.hard_pixel_negative)) add(p);
  return out;
}

}  // namespace vbg
