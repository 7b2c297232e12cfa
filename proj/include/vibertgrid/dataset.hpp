// SPDX-License-Identifier: Apache-2.0
//
// Reading a dataset directory: manifest.txt plus per-page OCR, image and
// labels files.
#pragma once

#include <string>
#include <vector>

#include "vibertgrid/docmodel.hpp"
#include "vibertgrid/evalkit.hpp"

namespace vbg {

struct ManifestEntry {
  std::string page_id;
  std::string split;
};

struct Manifest {
  FieldSchema schema;  // from the "#fields" header; empty when absent
  std::vector<ManifestEntry> entries;
};

Manifest load_manifest(const std::string& dir);

struct Dataset {
  FieldSchema schema;
  std::vector<Document> documents;
  std::vector<FieldValues> transcripts;
};

std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& bytes);

/// Loads one page. Words without labels in the OCR file are labeled from the
/// transcripts in <id>.labels.json when that file exists.
Document load_page(const std::string& dir, const std::string& page_id, const FieldSchema& schema,
                   FieldValues* transcripts = nullptr);

/// `split` is "train", "test" or "all". An empty `schema` takes the manifest's.
Dataset load_dataset(const std::string& dir, const std::string& split, FieldSchema schema = {});

}  // namespace vbg
