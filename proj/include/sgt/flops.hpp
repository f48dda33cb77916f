// SPDX-License-Identifier: Apache-2.0
//
// Analytic matmul FLOPs. A product of (m x n) by (n x k) costs 2mnk; training
// counts three times the forward pass.

#pragma once

#include "sgt/loop.hpp"
#include "sgt/model_config.hpp"

#include <cstdint>
#include <vector>

namespace sgt {

inline constexpr double kTrainingMultiplier = 3.0;

struct FlopsBreakdown {
  double qkv = 0;          // query/key/value projections
  double out_proj = 0;     // per-head output projections
  double scores = 0;       // Q K^T
  double mix = 0;          // A V
  double ffn = 0;          // gate, up and down projections
  double output_head = 0;  // final vocabulary projection

  double total() const { return qkv + out_proj + scores + mix + ffn + output_head; }
  double attention() const { return qkv + out_proj + scores + mix; }
  FlopsBreakdown& operator+=(const FlopsBreakdown& o);
};

/// One attention head on a length-n sequence.
FlopsBreakdown head_flops(const ModelConfig& config, std::int64_t n);
/// One FFN half-block.
FlopsBreakdown ffn_flops(const ModelConfig& config, std::int64_t n);
/// One layer under a directive, including its loop iterations.
FlopsBreakdown layer_flops(const ModelConfig& config, std::int64_t n, const LoopDirective& directive);
/// Whole forward pass of one sequence.
FlopsBreakdown forward_flops(const ModelConfig& config, std::int64_t n, const LoopPlan& plan);

/// Training FLOPs of one optimizer step over `batch` sequences.
double training_flops_per_step(const ModelConfig& config, std::int64_t n, std::int64_t batch, const LoopPlan& plan);

/// Cumulative training FLOPs. The per-step value only moves when the plan does.
class FlopsLedger {
 public:
  void record(double step_flops);
  double per_step() const { return per_step_; }
  double cumulative() const { return cumulative_; }
  std::int64_t steps() const { return steps_; }
  std::int64_t changes() const { return changes_; }
  void restore(double per_step, double cumulative, std::int64_t steps, std::int64_t changes);

  friend bool operator==(const FlopsLedger&, const FlopsLedger&) = default;

 private:
  double per_step_ = 0;
  double cumulative_ = 0;
  std::int64_t steps_ = 0;
  std::int64_t changes_ = 0;
};

}  // namespace sgt
