// SPDX-License-Identifier: Apache-2.0
#include "vibertgrid/evalkit.hpp"

#include <cstdio>
#include <limits>

#include "vibertgrid/errors.hpp"
#include "vibertgrid/text_util.hpp"

namespace vbg {

PredictionSet decode_predictions(const std::vector<double>& o1, const std::vector<std::vector<double>>& o2,
                                 double tau1, double tau2) {
  if (o1.size() != o2.size()) throw ShapeError("decode_predictions: o1 and o2 differ in word count");
  PredictionSet out(o1.size());
  for (std::size_t i = 0; i < o1.size(); ++i) {
    if (o1[i] < tau1) continue;
    for (std::size_t k = 0; k < o2[i].size(); ++k)
      if (o2[i][k] >= tau2) out[i].insert(static_cast<int>(k));
  }
  return out;
}

PredictionSet decode_predictions(const WordPrediction& pred, double tau1, double tau2) {
  auto o1 = pred.o1.detach().to(torch::kFloat64).contiguous();
  auto o2 = pred.o2.detach().to(torch::kFloat64).contiguous();
  const auto n = o1.numel();
  const auto c = n > 0 ? o2.size(1) : 0;
  std::vector<double> v1(o1.data_ptr<double>(), o1.data_ptr<double>() + n);
  std::vector<std::vector<double>> v2(static_cast<std::size_t>(n));
  const double* p2 = n > 0 ? o2.data_ptr<double>() : nullptr;
  for (std::int64_t i = 0; i < n; ++i) v2[static_cast<std::size_t>(i)].assign(p2 + i * c, p2 + (i + 1) * c);
  return decode_predictions(v1, v2, tau1, tau2);
}

PredictionSet ground_truth(const std::vector<Word>& words) {
  PredictionSet out;
  out.reserve(words.size());
  for (const auto& w : words) out.push_back(w.labels);
  return out;
}

double f1_score(std::int64_t tp, std::int64_t fp, std::int64_t fn) {
  const double p = tp + fp > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
  const double r = tp + fn > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
  return p + r > 0 ? 2.0 * p * r / (p + r) : 0.0;
}

WordF1Accumulator::WordF1Accumulator(int num_fields)
    : tp_(static_cast<std::size_t>(num_fields), 0), fp_(tp_), fn_(tp_) {}

void WordF1Accumulator::add(const PredictionSet& preds, const PredictionSet& gts) {
  if (preds.size() != gts.size()) throw ShapeError("word_f1: predictions and ground truth differ in word count");
  const int c = static_cast<int>(tp_.size());
  for (std::size_t i = 0; i < preds.size(); ++i) {
    for (int k = 0; k < c; ++k) {
      const bool p = preds[i].count(k) > 0;
      const bool g = gts[i].count(k) > 0;
      if (p && g) ++tp_[static_cast<std::size_t>(k)];
      else if (p) ++fp_[static_cast<std::size_t>(k)];
      else if (g) ++fn_[static_cast<std::size_t>(k)];
    }
    for (int k : preds[i])
      if (k < 0 || k >= c) throw SchemaError("word_f1: predicted field index " + std::to_string(k) + " out of range");
  }
  ++documents_;
  words_ += static_cast<std::int64_t>(preds.size());
}

MetricsReport WordF1Accumulator::report(const FieldSchema& schema) const {
  if (schema.size() != tp_.size()) throw SchemaError("word_f1: schema size does not match the tallies");
  MetricsReport r;
  std::int64_t tp = 0, fp = 0, fn = 0;
  double macro = 0;
  for (std::size_t k = 0; k < tp_.size(); ++k) {
    FieldScore s;
    s.name = schema.name(k);
    s.tp = tp_[k];
    s.fp = fp_[k];
    s.fn = fn_[k];
    s.precision = s.tp + s.fp > 0 ? static_cast<double>(s.tp) / static_cast<double>(s.tp + s.fp) : 0.0;
    s.recall = s.tp + s.fn > 0 ? static_cast<double>(s.tp) / static_cast<double>(s.tp + s.fn) : 0.0;
    s.f1 = f1_score(s.tp, s.fp, s.fn);
    macro += s.f1;
    tp += s.tp;
    fp += s.fp;
    fn += s.fn;
    r.fields.push_back(s);
  }
  r.micro_precision = tp + fp > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
  r.micro_recall = tp + fn > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
  r.micro_f1 = f1_score(tp, fp, fn);
  r.macro_f1 = tp_.empty() ? 0.0 : macro / static_cast<double>(tp_.size());
  r.documents = documents_;
  r.words = words_;
  return r;
}

MetricsReport word_f1(const PredictionSet& preds, const PredictionSet& gts, const FieldSchema& schema) {
  WordF1Accumulator acc(static_cast<int>(schema.size()));
  acc.add(preds, gts);
  return acc.report(schema);
}

void FieldLevelAccumulator::add(const FieldValues& extracted, const FieldValues& gt) {
  std::set<std::string> keys;
  for (const auto& [k, v] : extracted)
    if (!v.empty()) keys.insert(k);
  for (const auto& [k, v] : gt)
    if (!v.empty()) keys.insert(k);
  for (const auto& k : keys) {
    auto e = extracted.find(k);
    auto g = gt.find(k);
    const bool has_e = e != extracted.end() && !e->second.empty();
    const bool has_g = g != gt.end() && !g->second.empty();
    if (has_e && has_g && e->second == g->second) {
      ++tp_;
    } else {
      if (has_e) ++fp_;
      if (has_g) ++fn_;
    }
  }
}

FieldLevelScore FieldLevelAccumulator::score() const {
  FieldLevelScore s;
  s.tp = tp_;
  s.fp = fp_;
  s.fn = fn_;
  s.precision = tp_ + fp_ > 0 ? static_cast<double>(tp_) / static_cast<double>(tp_ + fp_) : 0.0;
  s.recall = tp_ + fn_ > 0 ? static_cast<double>(tp_) / static_cast<double>(tp_ + fn_) : 0.0;
  s.f1 = f1_score(tp_, fp_, fn_);
  return s;
}

FieldLevelScore field_level_f1(const FieldValues& extracted, const FieldValues& gt) {
  FieldLevelAccumulator acc;
  acc.add(extracted, gt);
  return acc.score();
}

FieldValues extract_fields(const std::vector<Word>& words, const PredictionSet& preds, const FieldSchema& schema,
                           ReadingOrder order) {
  if (preds.size() != words.size()) throw ShapeError("extract_fields: predictions and words differ in count");
  FieldValues out;
  for (std::size_t idx : reading_order_indices(words, order)) {
    for (int k : preds[idx]) {
      auto& s = out[schema.name(static_cast<std::size_t>(k))];
      if (!s.empty()) s += ' ';
      s += words[idx].text;
    }
  }
  return out;
}

Lexicon build_lexicon(const std::vector<FieldValues>& training_values) {
  Lexicon lex;
  for (const auto& doc : training_values)
    for (const auto& [field, value] : doc)
      if (!value.empty()) lex[field].insert(value);
  return lex;
}

std::string lexicon_autocorrect(const std::string& value, const std::set<std::string>& lexicon, double max_ratio) {
  if (lexicon.empty() || lexicon.count(value)) return value;
  std::size_t best = std::numeric_limits<std::size_t>::max();
  const std::string* choice = nullptr;
  // std::set iterates in lexicographic order, so the first minimum wins ties.
  for (const auto& entry : lexicon) {
    const std::size_t d = edit_distance(value, entry);
    if (d < best) {
      best = d;
      choice = &entry;
    }
  }
  if (choice && static_cast<double>(best) <= max_ratio * static_cast<double>(value.size())) return *choice;
  return value;
}

FieldValues autocorrect_fields(const FieldValues& values, const Lexicon& lexicon) {
  FieldValues out = values;
  for (auto& [field, value] : out) {
    auto it = lexicon.find(field);
    if (it != lexicon.end()) value = lexicon_autocorrect(value, it->second);
  }
  return out;
}

std::string format_report(const MetricsReport& report, const FieldLevelScore* field_level) {
  std::string out;
  char line[256];
  std::snprintf(line, sizeof line, "%-24s %10s %10s %10s %8s %8s %8s\n", "field", "precision", "recall", "f1", "tp",
                "fp", "fn");
  out += line;
  for (const auto& f : report.fields) {
    std::snprintf(line, sizeof line, "%-24s %10.4f %10.4f %10.4f %8lld %8lld %8lld\n", f.name.c_str(), f.precision,
                  f.recall, f.f1, static_cast<long long>(f.tp), static_cast<long long>(f.fp),
                  static_cast<long long>(f.fn));
    out += line;
  }
  std::snprintf(line, sizeof line, "%-24s %10.4f %10.4f %10.4f\n", "micro", report.micro_precision,
                report.micro_recall, report.micro_f1);
  out += line;
  std::snprintf(line, sizeof line, "%-24s %10s %10s %10.4f\n", "macro", "", "", report.macro_f1);
  out += line;
  if (field_level) {
    std::snprintf(line, sizeof line, "%-24s %10.4f %10.4f %10.4f %8lld %8lld %8lld\n", "field_level",
                  field_level->precision, field_level->recall, field_level->f1,
                  static_cast<long long>(field_level->tp), static_cast<long long>(field_level->fp),
                  static_cast<long long>(field_level->fn));
    out += line;
  }
  std::snprintf(line, sizeof line, "documents %lld, words %lld\n", static_cast<long long>(report.documents),
                static_cast<long long>(report.words));
  out += line;
  return out;
}

}  // namespace vbg
