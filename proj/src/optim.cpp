// SPDX-License-Identifier: Apache-2.0
#include "vibertgrid/optim.hpp"

#include <cmath>

#include "vibertgrid/errors.hpp"

namespace vbg {

std::int64_t ParameterGroup::numel() const {
  std::int64_t n = 0;
  for (const auto& p : params) n += p.tensor.numel();
  return n;
}

ParameterPartition partition_parameters(torch::nn::Module& model) {
  ParameterPartition part;
  part.transformer.name = "transformer";
  part.cnn_heads.name = "cnn_heads";
  auto starts = [](const std::string& s, const char* prefix) { return s.rfind(prefix, 0) == 0; };
  for (const auto& item : model.named_parameters()) {
    const std::string& name = item.key();
    if (starts(name, "encoder.")) {
      part.transformer.params.push_back({name, item.value()});
    } else if (starts(name, "backbone.") || starts(name, "word_head.") || starts(name, "aux_head.")) {
      part.cnn_heads.params.push_back({name, item.value()});
    } else {
      throw ConfigError("partition_parameters: parameter '" + name + "' belongs to no optimizer group");
    }
  }
  return part;
}

std::string to_string(OptimizerKind k) { return k == OptimizerKind::kAdamW ? "adamw" : "sgd"; }

OptimizerKind parse_optimizer_kind(const std::string& s) {
  if (s == "adamw" || s == "AdamW") return OptimizerKind::kAdamW;
  if (s == "sgd" || s == "SGD") return OptimizerKind::kSgd;
  throw ConfigError("unknown optimizer '" + s + "' (expected adamw or sgd)");
}

void check_finite_gradients(const ParameterGroup& group) {
  for (const auto& p : group.params) {
    const auto& g = p.tensor.grad();
    if (g.defined() && !torch::isfinite(g).all().item<bool>())
      throw NumericError("non-finite gradient for parameter '" + p.name + "'");
  }
}

void adamw_step(ParameterGroup& group, double lr, const AdamWOptions& opt, AdamWState& state) {
  check_finite_gradients(group);
  torch::NoGradGuard guard;
  for (auto& p : group.params) {
    const auto& g = p.tensor.grad();
    if (!g.defined()) continue;
    auto& slot = state.slots[p.name];
    if (!slot.exp_avg.defined()) {
      slot.exp_avg = torch::zeros_like(p.tensor);
      slot.exp_avg_sq = torch::zeros_like(p.tensor);
    }
    slot.step += 1;
    p.tensor.mul_(1.0 - lr * opt.weight_decay);
    slot.exp_avg.mul_(opt.beta1).add_(g, 1.0 - opt.beta1);
    slot.exp_avg_sq.mul_(opt.beta2).addcmul_(g, g, 1.0 - opt.beta2);
    const double bc1 = 1.0 - std::pow(opt.beta1, static_cast<double>(slot.step));
    const double bc2 = 1.0 - std::pow(opt.beta2, static_cast<double>(slot.step));
    auto denom = (slot.exp_avg_sq.sqrt() / std::sqrt(bc2)).add_(opt.eps);
    p.tensor.addcdiv_(slot.exp_avg, denom, -lr / bc1);
  }
}

void sgd_step(ParameterGroup& group, double lr, const SgdOptions& opt, SgdState& state) {
  check_finite_gradients(group);
  torch::NoGradGuard guard;
  for (auto& p : group.params) {
    const auto& g = p.tensor.grad();
    if (!g.defined()) continue;
    auto d = opt.weight_decay != 0.0 ? g + opt.weight_decay * p.tensor : g.clone();
    auto it = state.momentum.find(p.name);
    if (it == state.momentum.end()) {
      it = state.momentum.emplace(p.name, d).first;
    } else {
      it->second.mul_(opt.momentum).add_(d);
    }
    p.tensor.add_(it->second, -lr);
  }
}

void GroupOptimizer::step(ParameterGroup& group, double lr) {
  if (kind == OptimizerKind::kAdamW) adamw_step(group, lr, adamw, adamw_state);
  else sgd_step(group, lr, sgd, sgd_state);
}

LearningRates lr_schedule(int epoch, int step_in_epoch, int steps_per_epoch, const ScheduleConfig& cfg) {
  if (epoch < 0) throw ConfigError("lr_schedule: epoch must be >= 0");
  if (epoch < cfg.warmup_epochs) {
    const double total = static_cast<double>(cfg.warmup_epochs) * std::max(steps_per_epoch, 1);
    const double done = static_cast<double>(epoch) * std::max(steps_per_epoch, 1) + step_in_epoch;
    const double f = done / total;
    return {cfg.lr_t * f, cfg.lr_v * f};
  }
  const int decays = cfg.decay_every > 0 ? epoch / cfg.decay_every : 0;
  return {cfg.lr_t, cfg.lr_v / std::pow(cfg.decay_factor, decays)};
}

void zero_grad(ParameterGroup& group) {
  for (auto& p : group.params) {
    if (p.tensor.grad().defined()) p.tensor.mutable_grad() = torch::Tensor();
  }
}

}  // namespace vbg
