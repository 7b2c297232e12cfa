// SPDX-License-Identifier: Apache-2.0
#include "vibertgrid/docmodel.hpp"

#include <algorithm>
#include <numeric>

#include <json.hpp>

#include "vibertgrid/errors.hpp"
#include "vibertgrid/text_util.hpp"

namespace vbg {

using nlohmann::json;

FieldSchema::FieldSchema(std::vector<std::string> names) : names_(std::move(names)) {
  if (names_.empty()) throw SchemaError("field schema must hold at least one field");
  std::set<std::string> seen;
  for (const auto& n : names_) {
    if (n.empty()) throw SchemaError("field schema: empty field name");
    if (!seen.insert(n).second) throw SchemaError("field schema: duplicate field name '" + n + "'");
  }
}

std::optional<int> FieldSchema::find(std::string_view name) const {
  for (std::size_t i = 0; i < names_.size(); ++i)
    if (names_[i] == name) return static_cast<int>(i);
  return std::nullopt;
}

int FieldSchema::index_of(std::string_view name) const {
  if (auto k = find(name)) return *k;
  throw SchemaError("unknown field name '" + std::string(name) + "'");
}

namespace {

const json& require(const json& obj, const char* key, const std::string& path) {
  if (!obj.is_object() || !obj.contains(key))
    throw ParseError("OCR schema: missing field '" + path + key + "'");
  return obj.at(key);
}

Quad normalize_orientation(Quad q) {
  if (signed_area(q) < 0) std::swap(q[1], q[3]);
  return q;
}

}  // namespace

Document load_ocr_document(std::string_view ocr_bytes, std::string_view image_bytes,
                           const FieldSchema& schema) {
  json root;
  try {
    root = json::parse(ocr_bytes);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("OCR schema: malformed JSON: ") + e.what());
  }
  if (!root.is_object()) throw ParseError("OCR schema: top level must be an object");

  const auto& page_id = require(root, "page_id", "");
  if (!page_id.is_string()) throw ParseError("OCR schema: field 'page_id' must be a string");
  const auto& width = require(root, "width", "");
  const auto& height = require(root, "height", "");
  if (!width.is_number_integer()) throw ParseError("OCR schema: field 'width' must be an integer");
  if (!height.is_number_integer()) throw ParseError("OCR schema: field 'height' must be an integer");
  const auto& words = require(root, "words", "");
  if (!words.is_array()) throw ParseError("OCR schema: field 'words' must be an array");

  Document doc;
  doc.page_id = page_id.get<std::string>();
  doc.image = decode_pnm(image_bytes);
  const int w = width.get<int>();
  const int h = height.get<int>();
  if (doc.image.width != w || doc.image.height != h) {
    throw ValidationError("OCR document '" + doc.page_id + "': declared size " + std::to_string(w) +
                          "x" + std::to_string(h) + " differs from image size " +
                          std::to_string(doc.image.width) + "x" + std::to_string(doc.image.height));
  }

  for (std::size_t i = 0; i < words.size(); ++i) {
    const std::string path = "words[" + std::to_string(i) + "].";
    const auto& jw = words[i];
    const auto& text = require(jw, "text", path);
    if (!text.is_string() || text.get<std::string>().empty())
      throw ParseError("OCR schema: field '" + path + "text' must be a non-empty string");
    const auto& quad = require(jw, "quad", path);
    if (!quad.is_array() || quad.size() != 8)
      throw ParseError("OCR schema: field '" + path + "quad' must hold 8 numbers");
    Word word;
    word.text = text.get<std::string>();
    bool clamped = false;
    for (std::size_t j = 0; j < 4; ++j) {
      const auto& jx = quad[2 * j];
      const auto& jy = quad[2 * j + 1];
      if (!jx.is_number() || !jy.is_number())
        throw ParseError("OCR schema: field '" + path + "quad' must hold 8 numbers");
      const double x = jx.get<double>();
      const double y = jy.get<double>();
      const double cx = std::clamp(x, 0.0, static_cast<double>(w));
      const double cy = std::clamp(y, 0.0, static_cast<double>(h));
      clamped = clamped || cx != x || cy != y;
      word.quad[j] = Point{cx, cy};
    }
    if (clamped) warn("word " + std::to_string(i) + ": quad clamped to image bounds");
    if (std::abs(signed_area(word.quad)) < 1e-9)
      throw ValidationError("word " + std::to_string(i) + ": quad has zero area");
    word.quad = normalize_orientation(word.quad);
    if (jw.contains("labels")) {
      const auto& labels = jw.at("labels");
      if (!labels.is_array()) throw ParseError("OCR schema: field '" + path + "labels' must be an array");
      for (const auto& l : labels) {
        if (!l.is_string()) throw ParseError("OCR schema: field '" + path + "labels' must hold strings");
        if (schema.size() > 0) word.labels.insert(schema.index_of(l.get<std::string>()));
      }
    }
    doc.words.push_back(std::move(word));
  }
  return doc;
}

std::string dump_ocr_document(const Document& doc, const FieldSchema& schema) {
  json root;
  root["page_id"] = doc.page_id;
  root["width"] = doc.image.width;
  root["height"] = doc.image.height;
  root["words"] = json::array();
  for (const auto& w : doc.words) {
    json jw;
    jw["text"] = w.text;
    json quad = json::array();
    for (const auto& p : w.quad) {
      quad.push_back(p.x);
      quad.push_back(p.y);
    }
    jw["quad"] = std::move(quad);
    json labels = json::array();
    for (int k : w.labels) labels.push_back(schema.name(static_cast<std::size_t>(k)));
    jw["labels"] = std::move(labels);
    root["words"].push_back(std::move(jw));
  }
  return root.dump(1);
}

std::vector<std::size_t> reading_order_indices(const std::vector<Word>& words, ReadingOrder mode) {
  std::vector<Rect> rects;
  rects.reserve(words.size());
  for (const auto& w : words) rects.push_back(bounding_rect(w.quad));

  std::vector<std::size_t> order(words.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (rects[a].top != rects[b].top) return rects[a].top < rects[b].top;
    return rects[a].left < rects[b].left;
  });

  if (mode == ReadingOrder::kLineAware) {
    auto same_line = [&](std::size_t a, std::size_t b) {
      const double overlap = std::min(rects[a].bottom, rects[b].bottom) - std::max(rects[a].top, rects[b].top);
      const double shorter = std::min(rects[a].height(), rects[b].height());
      return overlap >= 0.5 * shorter;
    };
    // Lines are created in top order, so creation order is already line order.
    std::vector<std::vector<std::size_t>> lines;
    for (std::size_t idx : order) {
      bool placed = false;
      for (auto& line : lines) {
        if (std::any_of(line.begin(), line.end(), [&](std::size_t m) { return same_line(idx, m); })) {
          line.push_back(idx);
          placed = true;
          break;
        }
      }
      if (!placed) lines.push_back({idx});
    }
    order.clear();
    for (auto& line : lines) {
      std::stable_sort(line.begin(), line.end(),
                       [&](std::size_t a, std::size_t b) { return rects[a].left < rects[b].left; });
      order.insert(order.end(), line.begin(), line.end());
    }
  }
  return order;
}

std::vector<Word> reading_order_sort(std::vector<Word> words, ReadingOrder mode) {
  const auto order = reading_order_indices(words, mode);
  std::vector<Word> out;
  out.reserve(words.size());
  for (std::size_t idx : order) out.push_back(std::move(words[idx]));
  return out;
}

namespace {

struct RunMatch {
  std::size_t start = 0;
  std::size_t length = 0;
  std::size_t distance = 0;
};

std::optional<RunMatch> find_run(const std::vector<std::string>& normalized_words,
                                 const std::string& target) {
  const std::size_t n = normalized_words.size();
  std::optional<RunMatch> exact;
  for (std::size_t start = 0; start < n; ++start) {
    std::string concat;
    for (std::size_t end = start; end < n; ++end) {
      const auto& piece = normalized_words[end];
      if (!piece.empty()) concat = concat.empty() ? piece : concat + " " + piece;
      if (concat.size() > target.size()) break;
      if (concat == target) {
        const std::size_t len = end - start + 1;
        if (!exact || len < exact->length) exact = RunMatch{start, len, 0};
        break;
      }
    }
  }
  if (exact) return exact;

  const double tol = 0.2 * static_cast<double>(target.size());
  std::optional<RunMatch> best;
  for (std::size_t start = 0; start < n; ++start) {
    std::string concat;
    for (std::size_t end = start; end < n; ++end) {
      const auto& piece = normalized_words[end];
      if (!piece.empty()) concat = concat.empty() ? piece : concat + " " + piece;
      if (static_cast<double>(concat.size()) > target.size() + tol) break;
      if (static_cast<double>(concat.size()) < target.size() - tol) continue;
      const std::size_t d = edit_distance(concat, target);
      const std::size_t len = end - start + 1;
      if (!best || d < best->distance || (d == best->distance && len < best->length))
        best = RunMatch{start, len, d};
    }
  }
  if (best && static_cast<double>(best->distance) <= tol) return best;
  return std::nullopt;
}

}  // namespace

LabelAssignment assign_labels_from_transcripts(const Document& doc,
                                               const std::map<std::string, std::string>& transcripts,
                                               const FieldSchema& schema) {
  for (const auto& [name, value] : transcripts) schema.index_of(name);

  LabelAssignment result{doc, {}};
  std::vector<std::string> normalized;
  normalized.reserve(doc.words.size());
  for (const auto& w : doc.words) normalized.push_back(normalize_text(w.text));

  for (const auto& [name, value] : transcripts) {
    const int field = schema.index_of(name);
    const std::string target = normalize_text(value);
    std::optional<RunMatch> match;
    if (!target.empty()) match = find_run(normalized, target);
    if (!match) {
      result.unmatched_fields.push_back(name);
      continue;
    }
    for (std::size_t i = match->start; i < match->start + match->length; ++i)
      result.document.words[i].labels.insert(field);
  }
  return result;
}

std::map<std::string, std::string> parse_labels_file(std::string_view bytes, std::string* page_id) {
  json root;
  try {
    root = json::parse(bytes);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("labels file: malformed JSON: ") + e.what());
  }
  const auto& pid = require(root, "page_id", "");
  if (!pid.is_string()) throw ParseError("labels file: field 'page_id' must be a string");
  if (page_id) *page_id = pid.get<std::string>();
  const auto& fields = require(root, "fields", "");
  if (!fields.is_object()) throw ParseError("labels file: field 'fields' must be an object");
  std::map<std::string, std::string> out;
  for (auto it = fields.begin(); it != fields.end(); ++it) {
    if (!it.value().is_string())
      throw ParseError("labels file: field 'fields." + it.key() + "' must be a string");
    out[it.key()] = it.value().get<std::string>();
  }
  return out;
}

std::string dump_labels_file(const std::string& page_id, const std::map<std::string, std::string>& fields) {
  json root;
  root["page_id"] = page_id;
  root["fields"] = json::object();
  for (const auto& [k, v] : fields) root["fields"][k] = v;
  return root.dump(1);
}

}  // namespace vbg
