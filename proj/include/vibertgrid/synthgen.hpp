// SPDX-License-Identifier: Apache-2.0
//
// Deterministic synthetic receipts and invoices rendered with a 5x7 bitmap
// font, with OCR words, ground-truth labels and transcripts.
#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "vibertgrid/docmodel.hpp"
#include "vibertgrid/evalkit.hpp"

namespace vbg {

struct GenSpec {
  int min_width = 336;
  int max_width = 400;
  int min_height = 0;  // 0: fit the rendered lines
  int max_height = 1200;
  int glyph_scale = 2;
  FieldSchema schema{{"TOTAL", "DATE", "COMPANY", "ADDRESS"}};
  int templates = 3;
  /// Uniform pixel noise amplitude in [0, 1].
  double pixel_noise = 0.04;
  /// Maximum outward quad jitter in pixels.
  double box_jitter = 1.0;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Parses "key=value" lines (keys: min_width, max_width, min_height,
/// max_height, glyph_scale, fields, templates, pixel_noise, box_jitter, seed).
GenSpec parse_gen_spec(std::string_view text);
std::string to_gen_spec_text(const GenSpec& spec);

struct GeneratedDocument {
  Document document;
  FieldValues transcripts;
};

/// Probability that template `t` includes a value for `field`.
double field_probability(int template_index, const std::string& field);

/// Expected fraction of documents carrying `field` under uniform template choice.
double expected_field_frequency(const GenSpec& spec, const std::string& field);

std::string synthetic_page_id(std::uint64_t seed, int index);

/// Fully determined by (spec.seed, index).
GeneratedDocument generate_document(const GenSpec& spec, int index);

/// "train" for 80% of page ids, "test" otherwise; a function of the id only.
std::string split_of(const std::string& page_id);

/// Writes <id>.ppm, <id>.ocr.json and <id>.labels.json per document and a
/// manifest.txt listing "page_id split" lines.
std::vector<GeneratedDocument> generate_dataset(const GenSpec& spec, int n, const std::string& out_dir);

void render_text(Image& image, const std::string& text, int x, int y, int scale, float ink);
/// Pixel width of `text` at `scale` (no trailing gap).
int text_width(const std::string& text, int scale);

}  // namespace vbg
