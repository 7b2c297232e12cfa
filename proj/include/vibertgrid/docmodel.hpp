// SPDX-License-Identifier: Apache-2.0
//
// Documents, OCR words and field schemas; OCR ingestion, reading order and
// transcript-based label generation.
#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "vibertgrid/geometry.hpp"
#include "vibertgrid/image.hpp"

namespace vbg {

/// Ordered list of C field names. Index order is the classifier order.
class FieldSchema {
 public:
  FieldSchema() = default;
  explicit FieldSchema(std::vector<std::string> names);

  std::size_t size() const { return names_.size(); }
  const std::string& name(std::size_t k) const { return names_.at(k); }
  const std::vector<std::string>& names() const { return names_; }

  /// Index of `name`, or nullopt.
  std::optional<int> find(std::string_view name) const;
  /// Index of `name`; throws SchemaError when absent.
  int index_of(std::string_view name) const;

  friend bool operator==(const FieldSchema&, const FieldSchema&) = default;

 private:
  std::vector<std::string> names_;
};

struct Word {
  std::string text;
  Quad quad{};
  std::set<int> labels;

  bool has_label() const { return !labels.empty(); }
};

struct Document {
  Image image;
  std::vector<Word> words;
  std::string page_id;

  int height() const { return image.height; }
  int width() const { return image.width; }
};

/// Parses the OCR JSON schema and decodes the page image. Word labels (field
/// names) are resolved against `schema`; pass an empty schema to ignore them.
Document load_ocr_document(std::string_view ocr_bytes, std::string_view image_bytes,
                           const FieldSchema& schema = {});

/// Serializes `doc` in the OCR schema (labels written as field names).
std::string dump_ocr_document(const Document& doc, const FieldSchema& schema);

enum class ReadingOrder { kLineAware, kCoordinate };

/// Top-left to bottom-right ordering. Line-aware mode groups words whose
/// bounding rectangles overlap vertically by at least half of the shorter
/// height, orders lines by top and words within a line by left.
std::vector<Word> reading_order_sort(std::vector<Word> words,
                                     ReadingOrder mode = ReadingOrder::kLineAware);

/// The permutation applied by reading_order_sort: out[i] = words[order[i]].
std::vector<std::size_t> reading_order_indices(const std::vector<Word>& words,
                                               ReadingOrder mode = ReadingOrder::kLineAware);

struct LabelAssignment {
  Document document;
  std::vector<std::string> unmatched_fields;
};

/// Labels the words of the best contiguous run matching each transcript value.
/// Exact normalized match (shortest, then earliest run) is preferred; otherwise
/// the run of minimum edit distance is accepted when within 20% of the
/// transcript length.
LabelAssignment assign_labels_from_transcripts(const Document& doc,
                                               const std::map<std::string, std::string>& transcripts,
                                               const FieldSchema& schema);

/// Labels file: { "page_id": ..., "fields": { name: value } }.
std::map<std::string, std::string> parse_labels_file(std::string_view bytes,
                                                     std::string* page_id = nullptr);
std::string dump_labels_file(const std::string& page_id,
                             const std::map<std::string, std::string>& fields);

}  // namespace vbg
