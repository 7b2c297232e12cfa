// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <random>
#include <string>

#include "vibertgrid/config.hpp"
#include "vibertgrid/docmodel.hpp"

namespace vbg::testing {

inline Word box_word(const std::string& text, double l, double t, double r, double b, std::set<int> labels = {}) {
  Word w;
  w.text = text;
  w.quad = make_rect_quad(l, t, r, b);
  w.labels = std::move(labels);
  return w;
}

/// Fresh empty directory under the system temp dir.
inline std::string temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("vbg_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p.string();
}

/// The small model used by gradient and training tests (2 layers, hidden 16,
/// width 1/16, two fields). Dropout off.
inline RunConfig tiny_config(int fields = 2) {
  RunConfig cfg;
  cfg.model.encoder.layers = 2;
  cfg.model.encoder.heads = 2;
  cfg.model.encoder.hidden = 16;
  cfg.model.encoder.ffn_dim = 32;
  cfg.model.encoder.dropout = 0.0;
  cfg.model.backbone.width_multiplier = 0.0625;
  cfg.model.head.fc_dim = 32;
  std::vector<std::string> names = {"TOTAL", "DATE", "COMPANY", "ADDRESS"};
  names.resize(static_cast<std::size_t>(fields));
  cfg.schema = FieldSchema(names);
  cfg.train.scales = {64};
  cfg.train.test_shorter_side = 64;
  cfg.train.batch_size = 1;
  cfg.finalize();
  return cfg;
}

/// A 64x64 page with a handful of words, the first two labeled.
inline Document tiny_document(const std::string& id = "tiny") {
  Document doc;
  doc.page_id = id;
  doc.image = Image(64, 64, 1.0f);
  std::mt19937 rng(7);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  for (auto& p : doc.image.pixels) p = u(rng);
  doc.words.push_back(box_word("TOTAL", 4, 4, 28, 12));
  doc.words.push_back(box_word("12.34", 34, 4, 60, 12, {0}));
  doc.words.push_back(box_word("DATE", 4, 24, 24, 32));
  doc.words.push_back(box_word("01/02", 30, 24, 58, 32, {1}));
  doc.words.push_back(box_word("THANKS", 10, 46, 50, 56));
  return doc;
}

}  // namespace vbg::testing
