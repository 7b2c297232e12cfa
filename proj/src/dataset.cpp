// SPDX-License-Identifier: Apache-2.0
#include "vibertgrid/dataset.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "vibertgrid/errors.hpp"

namespace vbg {

namespace fs = std::filesystem;

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& bytes) {
  const fs::path p(path);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write '" + path + "'");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("short write to '" + path + "'");
}

Manifest load_manifest(const std::string& dir) {
  const std::string text = read_file((fs::path(dir) / "manifest.txt").string());
  Manifest m;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    if (line.rfind("#fields ", 0) == 0) {
      std::vector<std::string> names;
      std::istringstream parts(line.substr(8));
      std::string name;
      while (std::getline(parts, name, ',')) names.push_back(name);
      m.schema = FieldSchema(names);
      continue;
    }
    if (line[0] == '#') continue;
    std::istringstream fields(line);
    ManifestEntry e;
    if (!(fields >> e.page_id >> e.split) || (e.split != "train" && e.split != "test"))
      throw ParseError("manifest line " + std::to_string(lineno) + ": expected '<page_id> train|test'");
    m.entries.push_back(e);
  }
  return m;
}

Document load_page(const std::string& dir, const std::string& page_id, const FieldSchema& schema,
                   FieldValues* transcripts) {
  const fs::path base = fs::path(dir) / page_id;
  Document doc = load_ocr_document(read_file(base.string() + ".ocr.json"), read_file(base.string() + ".ppm"), schema);
  if (doc.page_id.empty()) doc.page_id = page_id;
  const std::string labels_path = base.string() + ".labels.json";
  if (!fs::exists(labels_path)) return doc;
  FieldValues values = parse_labels_file(read_file(labels_path));
  const bool labeled = std::any_of(doc.words.begin(), doc.words.end(), [](const Word& w) { return w.has_label(); });
  if (!labeled && !values.empty()) {
    auto assigned = assign_labels_from_transcripts(doc, values, schema);
    for (const auto& f : assigned.unmatched_fields) warn(page_id + ": no words match the " + f + " transcript");
    doc = std::move(assigned.document);
  }
  if (transcripts) *transcripts = std::move(values);
  return doc;
}

Dataset load_dataset(const std::string& dir, const std::string& split, FieldSchema schema) {
  if (split != "train" && split != "test" && split != "all")
    throw UsageError("split must be train, test or all (got '" + split + "')");
  const Manifest m = load_manifest(dir);
  Dataset ds;
  ds.schema = schema.size() ? std::move(schema) : m.schema;
  if (ds.schema.size() == 0) throw SchemaError("dataset '" + dir + "' has no field list; pass a schema");
  for (const auto& e : m.entries) {
    if (split != "all" && e.split != split) continue;
    FieldValues values;
    ds.documents.push_back(load_page(dir, e.page_id, ds.schema, &values));
    ds.transcripts.push_back(std::move(values));
  }
  return ds;
}

}  // namespace vbg
