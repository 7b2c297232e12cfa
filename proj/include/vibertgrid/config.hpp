// SPDX-License-Identifier: Apache-2.0
//
// Run configuration and its plain-text key=value form.
#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "vibertgrid/docmodel.hpp"
#include "vibertgrid/heads.hpp"
#include "vibertgrid/model.hpp"
#include "vibertgrid/optim.hpp"
#include "vibertgrid/sampler.hpp"

namespace vbg {

struct TrainConfig {
  int epochs = 33;
  int warmup_epochs = 1;
  OptimizerKind transformer_optimizer = OptimizerKind::kAdamW;
  OptimizerKind cnn_optimizer = OptimizerKind::kSgd;
  AdamWOptions adamw;  // hyperparameters when either group uses AdamW
  SgdOptions sgd;      // hyperparameters when either group uses SGD
  double lr_t = 2e-5;
  double lr_v = 0.016;
  int decay_every = 15;
  double decay_factor = 10.0;
  double lambda = 1.0;
  int max_grad_windows = 10;
  std::vector<int> scales{320, 416, 512, 608, 704};
  int max_long_side = 800;
  int test_shorter_side = 512;
  int batch_size = 2;
  std::uint64_t seed = 0;
  SamplingConfig sampling;
  SecondStageNorm second_stage_norm = SecondStageNorm::kPerClassifier;
  ReadingOrder reading_order = ReadingOrder::kLineAware;
  int workers = 1;
  /// Stop once training-set micro F1 reaches this value (checked per epoch); <= 0 disables.
  double target_train_f1 = 0.0;

  void validate() const;
  ScheduleConfig schedule() const;
};

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  FieldSchema schema{{"TOTAL", "DATE", "COMPANY", "ADDRESS"}};

  /// Syncs head.num_fields with the schema and finalizes the model config.
  RunConfig& finalize();
};

/// Canonical key=value text (fixed key order, one per line).
std::string to_config_text(const RunConfig& cfg);

/// Parses key=value lines; blank lines and '#' comments are ignored. Keys not
/// present keep their defaults. Unknown keys or bad values raise ConfigError.
RunConfig parse_config_text(std::string_view text);

/// Applies one "key=value" override.
void apply_config_entry(RunConfig& cfg, const std::string& key, const std::string& value);

/// Git blob hash: SHA-1 of "blob <len>\0" + bytes, lowercase hex.
std::string git_blob_hash(std::string_view bytes);

/// Lines "key: old -> new" for every key whose value differs.
std::vector<std::string> config_diff(std::string_view before, std::string_view after);

}  // namespace vbg
