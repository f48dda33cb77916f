// SPDX-License-Identifier: Apache-2.0
//
// Training run configuration and its flat key=value text form.
//
//   # comment
//   variant = sgt
//   steps = 500
//   excluded_layers = 0
//
// Unknown keys are rejected.

#pragma once

#include "sgt/growth.hpp"
#include "sgt/model_config.hpp"
#include "sgt/optimizer.hpp"

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace sgt {

enum class Variant { kVanilla, kBlockLoop, kSgt, kAblation };
enum class AblationArm { kNone, kBlock, kAttention, kHighEntropy, kLowEntropy };

const char* to_string(Variant v);
const char* to_string(AblationArm a);
Variant parse_variant(const std::string& s);
AblationArm parse_arm(const std::string& s);

struct TrainRunConfig {
  ModelConfig model;
  GrowthConfig growth;
  AdamWConfig optim;
  Variant variant = Variant::kSgt;

  // Block-loop baseline: the top layers by windowed entropy at t_start.
  int block_loop_layers = 3;
  int block_loop_depth = 1;

  // Single-layer ablation arms.
  AblationArm arm = AblationArm::kNone;
  int arm_layer = 0;
  int arm_depth = 1;
  bool two_stage = false;
  int two_stage_pool = 10;

  std::int64_t steps = 500;
  int batch_size = 2;
  double grad_clip = 1.0;
  std::uint64_t seed = 0;
  std::int64_t probe_every = 50;
  std::int64_t eval_every = 0;
  int eval_windows = 8;
  std::int64_t checkpoint_every = 0;
  double train_fraction = 0.9;
  std::vector<std::string> corpus;
  double divergence_factor = 1e4;

  /// Throws ConfigError.
  void validate() const;

  void set(const std::string& key, const std::string& value);
  /// Every documented key with its current value, in a fixed order.
  std::vector<std::pair<std::string, std::string>> entries() const;
  std::string to_text() const;

  static TrainRunConfig from_text(const std::string& text);
  static TrainRunConfig from_file(const std::string& path);
  static std::vector<std::string> keys();
};

bool operator==(const TrainRunConfig& a, const TrainRunConfig& b);

}  // namespace sgt
