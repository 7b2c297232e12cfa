// SPDX-License-Identifier: Apache-2.0
#include "vibertgrid/config.hpp"

#include <openssl/evp.h>

#include <charconv>
#include <cstdio>
#include <functional>
#include <map>
#include <sstream>

#include "vibertgrid/errors.hpp"

namespace vbg {

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("train.epochs must be >= 1");
  if (warmup_epochs < 0) throw ConfigError("train.warmup_epochs must be >= 0");
  if (lr_t <= 0 || lr_v <= 0) throw ConfigError("learning rates must be > 0");
  if (lambda < 0) throw ConfigError("train.lambda must be >= 0");
  if (max_grad_windows < 1) throw ConfigError("train.max_grad_windows must be >= 1");
  if (scales.empty()) throw ConfigError("train.scales must not be empty");
  for (std::size_t i = 0; i < scales.size(); ++i) {
    if (scales[i] < 1) throw ConfigError("train.scales must be positive");
    if (i > 0 && scales[i] < scales[i - 1]) throw ConfigError("train.scales must be sorted");
  }
  if (max_long_side < 1 || test_shorter_side < 1) throw ConfigError("image sizes must be positive");
  if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
  if (workers < 1) throw ConfigError("train.workers must be >= 1");
}

ScheduleConfig TrainConfig::schedule() const {
  return ScheduleConfig{lr_t, lr_v, warmup_epochs, decay_every, decay_factor};
}

RunConfig& RunConfig::finalize() {
  model.head.num_fields = static_cast<int>(schema.size());
  model.finalize();
  train.validate();
  return *this;
}

namespace {

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

int parse_int(const std::string& key, const std::string& v) {
  int out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) throw ConfigError("config: '" + key + "' expects an integer, got '" + v + "'");
  return out;
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size())
    throw ConfigError("config: '" + key + "' expects a non-negative integer, got '" + v + "'");
  return out;
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    double d = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError("config: '" + key + "' expects a number, got '" + v + "'");
  }
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("config: '" + key + "' expects true or false, got '" + v + "'");
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, sep)) out.push_back(cur);
  return out;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

struct Binding {
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string& key, const std::string&)> set;
};

#define VBG_INT(field) \
  Binding { [](const RunConfig& c) { return std::to_string(c.field); }, \
            [](RunConfig& c, const std::string& k, const std::string& v) { c.field = parse_int(k, v); } }
#define VBG_DOUBLE(field) \
  Binding { [](const RunConfig& c) { return fmt_double(c.field); }, \
            [](RunConfig& c, const std::string& k, const std::string& v) { c.field = parse_double(k, v); } }
#define VBG_BOOL(field) \
  Binding { [](const RunConfig& c) { return std::string(c.field ? "true" : "false"); }, \
            [](RunConfig& c, const std::string& k, const std::string& v) { c.field = parse_bool(k, v); } }

const std::vector<std::pair<std::string, Binding>>& bindings() {
  static const std::vector<std::pair<std::string, Binding>> table = {
      {"schema.fields",
       {[](const RunConfig& c) {
          std::string s;
          for (std::size_t i = 0; i < c.schema.size(); ++i) s += (i ? "," : "") + c.schema.name(i);
          return s;
        },
        [](RunConfig& c, const std::string&, const std::string& v) {
          std::vector<std::string> names;
          for (auto& n : split(v, ',')) names.push_back(trim(n));
          c.schema = FieldSchema(names);
        }}},
      {"encoder.layers", VBG_INT(model.encoder.layers)},
      {"encoder.heads", VBG_INT(model.encoder.heads)},
      {"encoder.hidden", VBG_INT(model.encoder.hidden)},
      {"encoder.ffn_dim", VBG_INT(model.encoder.ffn_dim)},
      {"encoder.max_positions", VBG_INT(model.encoder.max_positions)},
      {"encoder.vocab_size", VBG_INT(model.encoder.vocab_size)},
      {"encoder.dropout", VBG_DOUBLE(model.encoder.dropout)},
      {"encoder.frozen", VBG_BOOL(model.encoder.frozen)},
      {"encoder.init_std", VBG_DOUBLE(model.encoder.init_std)},
      {"backbone.width_multiplier", VBG_DOUBLE(model.backbone.width_multiplier)},
      {"backbone.fusion_stage",
       {[](const RunConfig& c) { return to_string(c.model.backbone.fusion_stage); },
        [](RunConfig& c, const std::string&, const std::string& v) { c.model.backbone.fusion_stage = parse_fusion_stage(v); }}},
      {"backbone.use_visual", VBG_BOOL(model.backbone.use_visual)},
      {"backbone.use_textual", VBG_BOOL(model.backbone.use_textual)},
      {"backbone.new_layer_std", VBG_DOUBLE(model.backbone.new_layer_std)},
      {"head.fc_dim", VBG_INT(model.head.fc_dim)},
      {"head.late_fusion", VBG_BOOL(model.head.late_fusion)},
      {"head.init_std", VBG_DOUBLE(model.head.init_std)},
      {"model.use_cnn", VBG_BOOL(model.use_cnn)},
      {"train.epochs", VBG_INT(train.epochs)},
      {"train.warmup_epochs", VBG_INT(train.warmup_epochs)},
      {"train.transformer_optimizer",
       {[](const RunConfig& c) { return to_string(c.train.transformer_optimizer); },
        [](RunConfig& c, const std::string&, const std::string& v) { c.train.transformer_optimizer = parse_optimizer_kind(v); }}},
      {"train.cnn_optimizer",
       {[](const RunConfig& c) { return to_string(c.train.cnn_optimizer); },
        [](RunConfig& c, const std::string&, const std::string& v) { c.train.cnn_optimizer = parse_optimizer_kind(v); }}},
      {"train.lr_t", VBG_DOUBLE(train.lr_t)},
      {"train.lr_v", VBG_DOUBLE(train.lr_v)},
      {"train.adamw.beta1", VBG_DOUBLE(train.adamw.beta1)},
      {"train.adamw.beta2", VBG_DOUBLE(train.adamw.beta2)},
      {"train.adamw.eps", VBG_DOUBLE(train.adamw.eps)},
      {"train.adamw.weight_decay", VBG_DOUBLE(train.adamw.weight_decay)},
      {"train.sgd.momentum", VBG_DOUBLE(train.sgd.momentum)},
      {"train.sgd.weight_decay", VBG_DOUBLE(train.sgd.weight_decay)},
      {"train.decay_every", VBG_INT(train.decay_every)},
      {"train.decay_factor", VBG_DOUBLE(train.decay_factor)},
      {"train.lambda", VBG_DOUBLE(train.lambda)},
      {"train.max_grad_windows", VBG_INT(train.max_grad_windows)},
      {"train.scales",
       {[](const RunConfig& c) {
          std::string s;
          for (std::size_t i = 0; i < c.train.scales.size(); ++i) s += (i ? "," : "") + std::to_string(c.train.scales[i]);
          return s;
        },
        [](RunConfig& c, const std::string& k, const std::string& v) {
          c.train.scales.clear();
          for (auto& n : split(v, ',')) c.train.scales.push_back(parse_int(k, trim(n)));
        }}},
      {"train.max_long_side", VBG_INT(train.max_long_side)},
      {"train.test_shorter_side", VBG_INT(train.test_shorter_side)},
      {"train.batch_size", VBG_INT(train.batch_size)},
      {"train.seed",
       {[](const RunConfig& c) { return std::to_string(c.train.seed); },
        [](RunConfig& c, const std::string& k, const std::string& v) { c.train.seed = parse_u64(k, v); }}},
      {"train.sampling.word_positive", VBG_INT(train.sampling.word_positive)},
      {"train.sampling.word_negative", VBG_INT(train.sampling.word_negative)},
      {"train.sampling.hard_word_positive", VBG_INT(train.sampling.hard_word_positive)},
      {"train.sampling.hard_word_negative", VBG_INT(train.sampling.hard_word_negative)},
      {"train.sampling.pixel_category1", VBG_INT(train.sampling.pixel_category1)},
      {"train.sampling.pixel_category2", VBG_INT(train.sampling.pixel_category2)},
      {"train.sampling.pixel_category3", VBG_INT(train.sampling.pixel_category3)},
      {"train.sampling.hard_pixel_positive", VBG_INT(train.sampling.hard_pixel_positive)},
      {"train.sampling.hard_pixel_negative", VBG_INT(train.sampling.hard_pixel_negative)},
      {"train.sampling.half_counts", VBG_BOOL(train.sampling.half_counts)},
      {"train.second_stage_norm",
       {[](const RunConfig& c) {
          return std::string(c.train.second_stage_norm == SecondStageNorm::kLiteral ? "literal" : "per_classifier");
        },
        [](RunConfig& c, const std::string& k, const std::string& v) {
          if (v == "literal") c.train.second_stage_norm = SecondStageNorm::kLiteral;
          else if (v == "per_classifier") c.train.second_stage_norm = SecondStageNorm::kPerClassifier;
          else throw ConfigError("config: '" + k + "' expects literal or per_classifier");
        }}},
      {"train.reading_order",
       {[](const RunConfig& c) {
          return std::string(c.train.reading_order == ReadingOrder::kCoordinate ? "coordinate" : "line_aware");
        },
        [](RunConfig& c, const std::string& k, const std::string& v) {
          if (v == "coordinate") c.train.reading_order = ReadingOrder::kCoordinate;
          else if (v == "line_aware") c.train.reading_order = ReadingOrder::kLineAware;
          else throw ConfigError("config: '" + k + "' expects line_aware or coordinate");
        }}},
      {"train.workers", VBG_INT(train.workers)},
      {"train.target_train_f1", VBG_DOUBLE(train.target_train_f1)},
  };
  return table;
}

#undef VBG_INT
#undef VBG_DOUBLE
#undef VBG_BOOL

std::map<std::string, std::string> parse_lines(std::string_view text) {
  std::map<std::string, std::string> out;
  std::istringstream in{std::string(text)};
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(lineno) + ": expected key=value");
    out[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return out;
}

}  // namespace

void apply_config_entry(RunConfig& cfg, const std::string& key, const std::string& value) {
  for (const auto& [k, b] : bindings()) {
    if (k == key) {
      b.set(cfg, key, value);
      return;
    }
  }
  throw ConfigError("config: unknown key '" + key + "'");
}

std::string to_config_text(const RunConfig& cfg) {
  std::string out;
  for (const auto& [k, b] : bindings()) out += k + "=" + b.get(cfg) + "\n";
  return out;
}

RunConfig parse_config_text(std::string_view text) {
  RunConfig cfg;
  std::istringstream in{std::string(text)};
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(lineno) + ": expected key=value");
    apply_config_entry(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return cfg;
}

std::string git_blob_hash(std::string_view bytes) {
  std::string payload = "blob " + std::to_string(bytes.size()) + std::string(1, '\0');
  payload.append(bytes);
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(payload.data(), payload.size(), digest, &len, EVP_sha1(), nullptr) != 1)
    throw IoError("sha1 digest failed");
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[digest[i] >> 4];
    out += hex[digest[i] & 15];
  }
  return out;
}

std::vector<std::string> config_diff(std::string_view before, std::string_view after) {
  const auto a = parse_lines(before);
  const auto b = parse_lines(after);
  std::vector<std::string> out;
  for (const auto& [k, v] : a) {
    auto it = b.find(k);
    if (it == b.end()) out.push_back(k + ": " + v + " -> (absent)");
    else if (it->second != v) out.push_back(k + ": " + v + " -> " + it->second);
  }
  for (const auto& [k, v] : b)
    if (!a.count(k)) out.push_back(k + ": (absent) -> " + v);
  return out;
}

}  // namespace vbg
