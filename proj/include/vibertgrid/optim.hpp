// SPDX-License-Identifier: Apache-2.0
//
// Parameter partitioning into the transformer and CNN-and-heads groups, the
// two closed-form optimizers, and the learning-rate schedule.
#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include <torch/torch.h>

namespace vbg {

struct NamedParameter {
  std::string name;
  torch::Tensor tensor;
};

struct ParameterGroup {
  std::string name;
  std::vector<NamedParameter> params;

  std::int64_t numel() const;
};

struct ParameterPartition {
  ParameterGroup transformer;
  ParameterGroup cnn_heads;
};

/// Encoder parameters go to the transformer group; backbone, fusion and head
/// parameters to the cnn-and-heads group. Throws ConfigError naming any
/// parameter outside both.
ParameterPartition partition_parameters(torch::nn::Module& model);

enum class OptimizerKind { kAdamW, kSgd };

std::string to_string(OptimizerKind k);
OptimizerKind parse_optimizer_kind(const std::string& s);

struct AdamWOptions {
  double lr = 2e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-2;
};

struct SgdOptions {
  double lr = 0.016;
  double momentum = 0.9;
  double weight_decay = 5e-4;
};

struct AdamWSlot {
  torch::Tensor exp_avg, exp_avg_sq;
  std::int64_t step = 0;
};

struct AdamWState {
  std::map<std::string, AdamWSlot> slots;
};

struct SgdState {
  std::map<std::string, torch::Tensor> momentum;
};

/// Throws NumericError naming the first parameter with a non-finite gradient.
void check_finite_gradients(const ParameterGroup& group);

/// Parameters with an undefined gradient are skipped. A non-finite gradient
/// aborts the whole step (no parameter changes) with a NumericError naming it.
void adamw_step(ParameterGroup& group, double lr, const AdamWOptions& opt, AdamWState& state);
void sgd_step(ParameterGroup& group, double lr, const SgdOptions& opt, SgdState& state);

/// Either optimizer behind one interface, as chosen per group.
struct GroupOptimizer {
  OptimizerKind kind = OptimizerKind::kAdamW;
  AdamWOptions adamw;
  SgdOptions sgd;
  AdamWState adamw_state;
  SgdState sgd_state;

  double base_lr() const { return kind == OptimizerKind::kAdamW ? adamw.lr : sgd.lr; }
  void step(ParameterGroup& group, double lr);
};

struct ScheduleConfig {
  double lr_t = 2e-5;
  double lr_v = 0.016;
  int warmup_epochs = 1;
  int decay_every = 15;
  double decay_factor = 10.0;
};

struct LearningRates {
  double lr_t = 0;
  double lr_v = 0;
};

/// Warmup epochs scale both rates linearly from 0 at the first step toward the peak.
/// Afterwards lr_T is constant and lr_V = lr_v / factor^floor(epoch / every).
LearningRates lr_schedule(int epoch, int step_in_epoch, int steps_per_epoch, const ScheduleConfig& cfg);

void zero_grad(ParameterGroup& group);

}  // namespace vbg
