// SPDX-License-Identifier: Apache-2.0
//
// Versioned binary checkpoint container: named tensors, config snapshot,
// vocabulary, counters and RNG state.
#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <torch/torch.h>

namespace vbg {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointData {
  std::string config_text;
  std::string vocab_text;
  std::int64_t epoch = 0;
  std::int64_t step_in_epoch = 0;
  std::int64_t global_step = 0;
  std::string rng_state;  // textual std::mt19937_64 state
  std::vector<std::pair<std::string, torch::Tensor>> tensors;

  /// Tensor by name; throws VersionError when absent.
  const torch::Tensor& tensor(const std::string& name) const;
  bool has(const std::string& name) const;
};

/// Layout: magic "VBGCKPT1", u32 version, length-prefixed strings and tensors
/// (name, dtype code, rank, dims, raw little-endian bytes).
std::string encode_checkpoint(const CheckpointData& data);
CheckpointData decode_checkpoint(std::string_view bytes);

void write_checkpoint(const std::string& path, const CheckpointData& data);
CheckpointData read_checkpoint(const std::string& path);

}  // namespace vbg
