// SPDX-License-Identifier: Apache-2.0
//
// Post-hoc probes on a trained model: entropy statistics on held-out windows,
// per-loop weighted attention contribution and head-masking evaluation.

#pragma once

#include "sgt/entropy.hpp"
#include "sgt/loop.hpp"
#include "sgt/trainer.hpp"

#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace sgt {

/// Base-pass last-row entropies averaged over up to max_windows windows.
EntropyWindow probe_entropy(const ParamStore<float>& params, const ModelConfig& config, const LoopPlan& plan,
                            std::span<const int> tokens, int seq_len, int max_windows);

struct ContributionPoint {
  int loop_index = 0;
  int token_index = 0;
  double contribution = 0;
};

/// C_j = A_{N,j} * ||V_j|| of one head's last query row on every pass of that
/// head (base pass and each loop iteration it takes part in).
std::vector<ContributionPoint> contribution_flow(const ParamStore<float>& params, const ModelConfig& config,
                                                 const LoopPlan& plan, std::span<const int> ids, int layer, int head);

std::string contribution_flow_json(std::span<const ContributionPoint> points);

struct MaskResult {
  std::vector<HeadRef> masked;
  EvalResult baseline;
  EvalResult masked_eval;
};

MaskResult evaluate_mask(const ParamStore<float>& params, const ModelConfig& config, std::span<const HeadRef> heads,
                         std::span<const int> tokens, int seq_len, int max_windows);

/// Parses "L:H,L:H,...".
std::vector<HeadRef> parse_head_refs(const std::string& text);

}  // namespace sgt
