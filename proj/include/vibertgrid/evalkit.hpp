// SPDX-License-Identifier: Apache-2.0
//
// Prediction decoding, word-level micro/macro F1, field-level exact-match F1
// and lexicon autocorrection.
#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "vibertgrid/docmodel.hpp"
#include "vibertgrid/heads.hpp"

namespace vbg {

/// Per-word sets of field indices.
using PredictionSet = std::vector<std::set<int>>;

/// Field k is assigned iff o1 >= tau1 and o2[k] >= tau2.
PredictionSet decode_predictions(const std::vector<double>& o1, const std::vector<std::vector<double>>& o2,
                                 double tau1 = 0.5, double tau2 = 0.5);
PredictionSet decode_predictions(const WordPrediction& pred, double tau1 = 0.5, double tau2 = 0.5);

PredictionSet ground_truth(const std::vector<Word>& words);

struct FieldScore {
  std::string name;
  std::int64_t tp = 0, fp = 0, fn = 0;
  double precision = 0, recall = 0, f1 = 0;
};

struct MetricsReport {
  std::vector<FieldScore> fields;
  double micro_precision = 0, micro_recall = 0, micro_f1 = 0;
  double macro_f1 = 0;
  std::int64_t documents = 0;
  std::int64_t words = 0;
};

/// 2PR / (P + R) with every 0/0 taken as 0.
double f1_score(std::int64_t tp, std::int64_t fp, std::int64_t fn);

/// Corpus-level tallies pooled over documents.
class WordF1Accumulator {
 public:
  explicit WordF1Accumulator(int num_fields);
  void add(const PredictionSet& preds, const PredictionSet& gts);
  MetricsReport report(const FieldSchema& schema) const;

 private:
  std::vector<std::int64_t> tp_, fp_, fn_;
  std::int64_t documents_ = 0;
  std::int64_t words_ = 0;
};

MetricsReport word_f1(const PredictionSet& preds, const PredictionSet& gts, const FieldSchema& schema);

using FieldValues = std::map<std::string, std::string>;

struct FieldLevelScore {
  std::int64_t tp = 0, fp = 0, fn = 0;
  double precision = 0, recall = 0, f1 = 0;
};

/// Exact string match per (document, field). A wrong non-empty value counts
/// as one false positive and one false negative.
class FieldLevelAccumulator {
 public:
  void add(const FieldValues& extracted, const FieldValues& gt);
  FieldLevelScore score() const;

 private:
  std::int64_t tp_ = 0, fp_ = 0, fn_ = 0;
};

FieldLevelScore field_level_f1(const FieldValues& extracted, const FieldValues& gt);

/// Space-joined texts of the words predicted for each field, in reading order.
/// Fields with no predicted word are omitted.
FieldValues extract_fields(const std::vector<Word>& words, const PredictionSet& preds, const FieldSchema& schema,
                           ReadingOrder order = ReadingOrder::kLineAware);

using Lexicon = std::map<std::string, std::set<std::string>>;

Lexicon build_lexicon(const std::vector<FieldValues>& training_values);

/// Replaces `value` by its nearest lexicon entry when that entry is within 15%
/// of the value's length in edit distance; ties go to the lexicographically
/// smallest entry.
std::string lexicon_autocorrect(const std::string& value, const std::set<std::string>& lexicon,
                                double max_ratio = 0.15);

FieldValues autocorrect_fields(const FieldValues& values, const Lexicon& lexicon);

/// Per-field table followed by micro/macro rows and, when given, field-level F1.
std::string format_report(const MetricsReport& report, const FieldLevelScore* field_level = nullptr);

}  // namespace vbg
