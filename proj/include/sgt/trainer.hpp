// SPDX-License-Identifier: Apache-2.0
//
// Training loop with the growth operator, evaluation and run logs.

#pragma once

#include "sgt/corpus.hpp"
#include "sgt/entropy.hpp"
#include "sgt/flops.hpp"
#include "sgt/growth.hpp"
#include "sgt/optimizer.hpp"
#include "sgt/run_config.hpp"
#include "sgt/weights.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace sgt {

/// Everything needed to continue a run from `step` onward.
struct TrainerState {
  TrainRunConfig config;
  std::int64_t step = 0;  // completed optimizer steps
  ParamStore<float> params;
  AdamState<float> adam;
  ArchState arch;
  LoopPlan fixed_plan;          // block-loop baseline and ablation arms
  std::vector<int> stage_pool;  // two-stage candidates awaiting the second window
  EntropyWindow window;         // growth window, reset at each decision
  EntropyWindow log_window;     // probe log window, reset every probe_every steps
  FlopsLedger ledger;

  /// Loop plan in force for the next step.
  LoopPlan plan() const;
};

TrainerState init_trainer(const TrainRunConfig& config);

struct StepMetrics {
  std::int64_t step = 0;
  double loss = 0;
  double grad_norm = 0;
  double flops_step = 0;
  double flops_cum = 0;
  Phase phase = Phase::kWarmup;
  std::vector<int> active_layers;
  std::optional<int> growing_layer;
  std::vector<GrowthEvent> events;
};

/// Last-row entropies of the base attention pass, one per (layer, head).
std::vector<AttentionTrace> base_pass_traces(const std::vector<std::vector<double>>& rows, int n_layer, int n_head);

/// One optimizer step followed by the schedule decision of that step.
StepMetrics train_step(TrainerState& state, const CorpusSplit& corpus);

/// Schedule decision after step t's update (growth operator, baseline/arm
/// activation). Returns emitted events.
std::vector<GrowthEvent> apply_schedule(TrainerState& state, std::int64_t t);

struct EvalResult {
  double ppl = 0;
  double mean_nll = 0;
  std::int64_t positions = 0;
  std::int64_t windows = 0;
};

/// exp(mean next-token NLL) over non-overlapping windows of seq_len tokens.
EvalResult evaluate_perplexity(const ParamStore<float>& params, const ModelConfig& config, const LoopPlan& plan,
                               std::span<const int> tokens, int seq_len, int max_windows);

struct LongContextRow {
  int multiplier = 1;
  int seq_len = 0;
  EvalResult result;
};

std::vector<LongContextRow> long_context_eval(const ParamStore<float>& params, const ModelConfig& config,
                                              const LoopPlan& plan, std::span<const int> tokens,
                                              std::span<const int> multipliers, int max_windows);

struct RunOptions {
  std::filesystem::path out_dir;  // empty: no files written
  std::optional<std::int64_t> stop_after;  // stop early after this step (still checkpoints)
  std::function<void(const StepMetrics&)> on_step;
};

/// Runs from state.step + 1 to config.steps (or stop_after), writing
/// metrics.csv, entropy_heads.csv, entropy_layers.csv, growth.jsonl,
/// eval.csv and checkpoints into the run directory.
void run_training(TrainerState& state, const CorpusSplit& corpus, const RunOptions& options);

inline constexpr const char* kMetricsHeader = "step,loss,ppl,flops_step,flops_cum,phase,active_layers,growing_layer";
inline constexpr const char* kEvalHeader = "step,val_loss,val_ppl";
inline constexpr const char* kLongContextHeader = "multiplier,seq_len,ppl,mean_nll,windows";

std::string format_metrics_row(const StepMetrics& m);

}  // namespace sgt
